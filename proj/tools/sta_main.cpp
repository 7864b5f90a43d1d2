// CLI for the Siamese tracker attack lab. Thin wrapper over the C API.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sta.h"

namespace {

struct SessionDeleter {
    void operator()(sta_session* s) const { sta_session_destroy(s); }
};

int run_command(const std::string& name, const std::string& config, bool have_seed, uint64_t seed,
                const std::string& out, const std::vector<std::string>& sets) {
    std::unique_ptr<sta_session, SessionDeleter> session(sta_session_create());
    sta_session* s = session.get();
    auto check = [&](int rc) {
        if (rc != STA_OK) {
            std::fprintf(stderr, "sta %s: %s\n", name.c_str(), sta_last_error(s));
            std::exit(rc);
        }
    };
    if (!config.empty()) check(sta_load_config_file(s, config.c_str()));
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "sta %s: --set expects key=value, got '%s'\n", name.c_str(),
                         kv.c_str());
            return STA_ERR_CONFIG;
        }
        check(sta_set_override(s, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    if (have_seed) check(sta_set_seed(s, seed));
    if (!out.empty()) check(sta_set_output_dir(s, out.c_str()));

    int rc;
    if (name == "scene")
        rc = sta_run_scene(s);
    else if (name == "attack")
        rc = sta_run_attack(s);
    else if (name == "track")
        rc = sta_run_track(s);
    else if (name == "eval")
        rc = sta_run_eval(s);
    else if (name == "transfer")
        rc = sta_run_transfer(s);
    else
        rc = sta_run_gradcheck(s);
    if (rc != STA_OK) std::fprintf(stderr, "sta %s: %s\n", name.c_str(), sta_last_error(s));
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Siamese tracker attack lab: render, attack, track, evaluate"};
    app.require_subcommand(1);

    std::string config, out;
    uint64_t seed = 0;
    bool have_seed = false;
    std::vector<std::string> sets;
    app.add_option("--config", config, "JSON run configuration file");
    app.add_option("--seed", seed, "global seed (overrides config)")
        ->each([&](const std::string&) { have_seed = true; });
    app.add_option("--out", out, "output directory (overrides config)");
    app.add_option("--set", sets, "config override, dotted key=value (repeatable)");

    const char* names[] = {"scene", "attack", "track", "eval", "transfer", "gradcheck"};
    const char* descs[] = {"generate the scene, clean texture and ground truth",
                           "run the texture attack against the configured victim",
                           "run the tracker over the rendered scene",
                           "compute IOU/score/drift report from tracking output",
                           "run the transferability study over the victim list",
                           "full-pipeline finite-difference gradient check"};
    for (int i = 0; i < 6; ++i) app.add_subcommand(names[i], descs[i]);

    CLI11_PARSE(app, argc, argv);
    return run_command(app.get_subcommands().front()->get_name(), config, have_seed, seed, out,
                       sets);
}
