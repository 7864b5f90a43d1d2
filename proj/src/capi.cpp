#include "sta.h"

#include <string>

#include "sta/pipeline.hpp"

struct sta_session {
    sta::Pipeline pipeline;
    std::string last_error;
};

namespace {

template <typename Fn>
int guarded(sta_session* s, Fn&& fn) {
    if (!s) return STA_ERR_CONFIG;
    try {
        fn();
        s->last_error.clear();
        return STA_OK;
    } catch (const sta::ConfigError& e) {
        s->last_error = e.what();
        return STA_ERR_CONFIG;
    } catch (const sta::NumericError& e) {
        s->last_error = e.what();
        return STA_ERR_NUMERIC;
    } catch (const std::exception& e) {
        s->last_error = e.what();
        return STA_ERR_NUMERIC;
    }
}

}  // namespace

extern "C" {

sta_session* sta_session_create(void) { return new (std::nothrow) sta_session(); }

void sta_session_destroy(sta_session* s) { delete s; }

const char* sta_last_error(const sta_session* s) { return s ? s->last_error.c_str() : ""; }

int sta_load_config_file(sta_session* s, const char* path) {
    return guarded(s, [&] {
        if (!path) throw sta::ConfigError("null config path");
        s->pipeline.load_config_file(path);
    });
}

int sta_load_config_json(sta_session* s, const char* json_text) {
    return guarded(s, [&] {
        if (!json_text) throw sta::ConfigError("null config text");
        s->pipeline.load_config_text(json_text);
    });
}

int sta_set_override(sta_session* s, const char* dotted_key, const char* value) {
    return guarded(s, [&] {
        if (!dotted_key || !value) throw sta::ConfigError("null override");
        s->pipeline.set_override(dotted_key, value);
    });
}

int sta_set_seed(sta_session* s, uint64_t seed) {
    return guarded(s, [&] { s->pipeline.set_seed(seed); });
}

int sta_set_output_dir(sta_session* s, const char* dir) {
    return guarded(s, [&] {
        if (!dir) throw sta::ConfigError("null output dir");
        s->pipeline.set_out(dir);
    });
}

int sta_run_scene(sta_session* s) {
    return guarded(s, [&] { s->pipeline.run_scene(); });
}
int sta_run_attack(sta_session* s) {
    return guarded(s, [&] { s->pipeline.run_attack(); });
}
int sta_run_track(sta_session* s) {
    return guarded(s, [&] { s->pipeline.run_track(); });
}
int sta_run_eval(sta_session* s) {
    return guarded(s, [&] { s->pipeline.run_eval(); });
}
int sta_run_transfer(sta_session* s) {
    return guarded(s, [&] { s->pipeline.run_transfer(); });
}
int sta_run_gradcheck(sta_session* s) {
    return guarded(s, [&] { s->pipeline.run_gradcheck(); });
}

}  // extern "C"
