// Command layer: JSON run configuration plus the scene / attack / track /
// eval / transfer / gradcheck commands that the C API and CLI expose.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sta/attack.hpp"
#include "sta/eval.hpp"
#include "sta/renderer.hpp"
#include "sta/siamese.hpp"
#include "sta/tracker.hpp"

namespace sta {

// Usage / configuration problems (exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Numeric failures, e.g. a failed gradient check (exit code 1).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct VictimSpec {
    std::string name = "victim";
    HeadKind head = HeadKind::kSymmetric;
    uint64_t seed = 1;
    VictimGeometry geom;
    int finetune_iters = 0;
    int rpn_train_iters = 40;  // RPN classification-branch training steps
};

struct RunConfig {
    std::string out = "out";
    uint64_t seed = 1;
    int texture_size = 48;
    Scene scene;
    VictimSpec victim;
    std::vector<VictimSpec> victims;  // transfer study rows
    TrackerConfig tracker;
    double drift_tau = 0.1;
    EotDistribution eot;
    AttackConfig attack;
    bool write_frames = false;
    // Optional explicit input paths; empty = conventional file under out/.
    std::string texture_path;
    std::string scene_path;
    std::string track_csv_path;
    std::string gt_csv_path;
    std::string baseline_csv_path;
};

Scene default_scene();
Scene occlusion_free_scene();

// Blocky high-contrast clean texture, deterministic per seed.
Tensor make_clean_texture(int size, uint64_t seed);
Tensor make_random_texture(int size, uint64_t seed);

Victim build_victim(const VictimSpec& spec);

// Full-pipeline finite-difference check at n random texel coordinates.
struct GradcheckReport {
    int checked = 0;
    int failed = 0;
    double max_rel_err = 0;
    bool pass() const { return checked > 0 && failed == 0; }
};
GradcheckReport gradcheck_full_pipeline(const Victim& victim, const EotDistribution& dist,
                                        int texture_size, int n_coords, uint64_t seed,
                                        double step_h, double tol);

// The session object behind the C API: holds config + overrides.
class Pipeline {
  public:
    Pipeline();
    void load_config_text(const std::string& json_text);
    void load_config_file(const std::string& path);
    void set_override(const std::string& dotted_key, const std::string& value);
    void set_seed(uint64_t seed);
    void set_out(const std::string& dir);

    RunConfig config() const;  // merged + validated

    void run_scene();
    void run_attack();
    void run_track();
    void run_eval();
    void run_transfer();
    void run_gradcheck();

  private:
    std::string cfg_text_;  // raw JSON (defaults when empty)
    std::vector<std::pair<std::string, std::string>> overrides_;
    bool seed_set_ = false;
    uint64_t seed_ = 0;
    std::string out_;
};

}  // namespace sta
