#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "sta.h"

namespace fs = std::filesystem;

namespace {

struct Session {
    sta_session* s = sta_session_create();
    ~Session() { sta_session_destroy(s); }
};

struct TempDir {
    fs::path path;
    TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("session lifecycle and error slate") {
    Session ses;
    REQUIRE(ses.s != nullptr);
    CHECK(std::string(sta_last_error(ses.s)).empty());
    sta_session_destroy(nullptr);  // tolerated
}

TEST_CASE("config loading: bad json and unknown keys give STA_ERR_CONFIG") {
    Session ses;
    CHECK(sta_load_config_json(ses.s, "{not json") == STA_ERR_CONFIG);
    CHECK(std::strlen(sta_last_error(ses.s)) > 0);
    CHECK(sta_load_config_json(ses.s, R"({"bogus_key": 1})") == STA_ERR_CONFIG);
    CHECK(sta_load_config_json(ses.s, R"({"seed": 7})") == STA_OK);
    CHECK(sta_load_config_file(ses.s, "/nonexistent/cfg.json") == STA_ERR_CONFIG);
}

TEST_CASE("overrides are validated when a command runs") {
    Session ses;
    TempDir dir("sta_capi_ovr");
    CHECK(sta_set_output_dir(ses.s, dir.path.c_str()) == STA_OK);
    CHECK(sta_set_override(ses.s, "attack.iters", "not-an-int") == STA_OK);
    CHECK(sta_run_scene(ses.s) == STA_ERR_CONFIG);
    CHECK(std::strlen(sta_last_error(ses.s)) > 0);
}

TEST_CASE("null argument handling") {
    CHECK(sta_load_config_json(nullptr, "{}") == STA_ERR_CONFIG);
    Session ses;
    CHECK(sta_load_config_json(ses.s, nullptr) == STA_ERR_CONFIG);
    CHECK(sta_set_override(ses.s, nullptr, "1") == STA_ERR_CONFIG);
}

TEST_CASE("scene command writes the conventional files") {
    Session ses;
    TempDir dir("sta_capi_scene");
    CHECK(sta_set_output_dir(ses.s, dir.path.c_str()) == STA_OK);
    CHECK(sta_set_seed(ses.s, 3) == STA_OK);
    // small scene to keep this fast
    CHECK(sta_set_override(ses.s, "scene.width", "128") == STA_OK);
    CHECK(sta_set_override(ses.s, "scene.frames", "6") == STA_OK);
    CHECK(sta_set_override(ses.s,
                           "scene.trajectory", R"([{"frame":0,"cx":20,"cy":48},{"frame":5,"cx":100,"cy":48}])") == STA_OK);
    CHECK(sta_set_override(ses.s, "scene.occluders", "[]") == STA_OK);
    CHECK(sta_set_override(ses.s, "texture_size", "16") == STA_OK);
    REQUIRE(sta_run_scene(ses.s) == STA_OK);
    CHECK(fs::exists(dir.path / "scene.json"));
    CHECK(fs::exists(dir.path / "clean_texture.png"));
    CHECK(fs::exists(dir.path / "clean_texture.f64"));
    CHECK(fs::exists(dir.path / "ground_truth.csv"));
}

TEST_CASE("attack then track then eval round trip through the C API") {
    Session ses;
    TempDir dir("sta_capi_pipeline");
    CHECK(sta_set_output_dir(ses.s, dir.path.c_str()) == STA_OK);
    CHECK(sta_set_seed(ses.s, 11) == STA_OK);
    CHECK(sta_set_override(ses.s, "scene.width", "128") == STA_OK);
    CHECK(sta_set_override(ses.s, "scene.height", "64") == STA_OK);
    CHECK(sta_set_override(ses.s, "scene.frames", "6") == STA_OK);
    CHECK(sta_set_override(ses.s, "scene.trajectory", R"([{"frame":0,"cx":24,"cy":32},{"frame":5,"cx":100,"cy":32}])") == STA_OK);
    CHECK(sta_set_override(ses.s, "scene.occluders", "[]") == STA_OK);
    CHECK(sta_set_override(ses.s, "scene.target", R"({"width":20,"height":20})") == STA_OK);
    CHECK(sta_set_override(ses.s, "texture_size", "20") == STA_OK);
    CHECK(sta_set_override(ses.s, "attack.iters", "2") == STA_OK);
    CHECK(sta_set_override(ses.s, "attack.eot_k", "2") == STA_OK);
    CHECK(sta_set_override(ses.s, "attack.canvas", "96") == STA_OK);

    REQUIRE(sta_run_scene(ses.s) == STA_OK);
    REQUIRE(sta_run_attack(ses.s) == STA_OK);
    CHECK(fs::exists(dir.path / "adv_texture.png"));
    CHECK(fs::exists(dir.path / "adv_texture.f64"));
    CHECK(fs::exists(dir.path / "loss_trace.csv"));
    CHECK(fs::exists(dir.path / "attack_report.json"));

    REQUIRE(sta_run_track(ses.s) == STA_OK);
    CHECK(fs::exists(dir.path / "track.csv"));
    CHECK(fs::exists(dir.path / "track_report.json"));

    REQUIRE(sta_run_eval(ses.s) == STA_OK);
    CHECK(fs::exists(dir.path / "report.json"));
    CHECK(fs::exists(dir.path / "curves.csv"));
}

TEST_CASE("error text is preserved on the session that failed") {
    Session a, b;
    CHECK(sta_load_config_json(a.s, "{oops") == STA_ERR_CONFIG);
    CHECK(std::strlen(sta_last_error(a.s)) > 0);
    CHECK(std::string(sta_last_error(b.s)).empty());
}
