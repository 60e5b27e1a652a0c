#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmg/rng.hpp"
#include "dmg/tensor.hpp"

namespace dmg {

// Motion layout: kFrames x kChannels, channels 0-1 root xy position,
// 2-3 left-limb angles, 4-5 right-limb angles.
inline constexpr int kFrames = 64;
inline constexpr int kChannels = 6;
inline constexpr f32 kChannelMax = 10.0f;

// Limb channels below this mean-|value| count as rest pose (shared between
// the oracle and the decomposition scorer).
inline constexpr f64 kRestThreshold = 0.05;

enum class Family { Path, Gesture };

const std::array<std::string, 4>& path_names();    // straight circle zigzag stop
const std::array<std::string, 4>& gesture_names(); // wave_left wave_right raise_both idle

bool is_path_name(const std::string& name);
bool is_gesture_name(const std::string& name);

// All 16 (path, gesture) pairs in fixed order.
std::vector<std::pair<std::string, std::string>> all_pairs();

// One motion concept with its continuous parameters. Documented keys:
//   straight: speed [0.07,0.14], heading [0,2pi)
//   circle:   radius [1,3], turns +-[0.75,1.5] (sign = direction), phase [0,2pi)
//   zigzag:   speed [0.07,0.14], heading [0,2pi), zig_angle [0.7,1.2],
//             period {10..16}
//   stop:     (none)
//   wave_left/wave_right: amplitude [0.6,1.8], cycles [2,5], phase [0,2pi)
//   raise_both: amplitude [0.6,1.8]
//   idle:     (none)
struct ConceptSpec {
    Family family;
    std::string name;
    std::map<std::string, f64> params;
};

// Draws parameters in the documented ranges.
ConceptSpec sample_concept(const std::string& name, Rng& rng);

// Renders one concept. PATH concepts write channels 0-1 (root recentered to
// zero temporal mean) and leave limbs at rest; GESTURE concepts write
// channels 2-5 and keep the root stationary.
Array<f32> synth_concept_motion(const ConceptSpec& spec, int length);

// Channel-partition composition: root from the path input, limbs from the
// gesture input. Preconditions (same length, path limbs at rest, gesture
// root stationary) are enforced.
Array<f32> compose_pair(const Array<f32>& path_motion, const Array<f32>& gesture_motion);

// Deterministic split of a holistic label into its two concept names.
std::pair<std::string, std::string> decompose_label(const std::string& path,
                                                    const std::string& gesture);

// Nearest-class analytic classifier; always returns a (path, gesture) pair.
std::pair<std::string, std::string> oracle_classify(const Array<f32>& motion);

// Mean |channels 2-5|; below kRestThreshold counts as rest pose.
f64 rest_limb_level(const Array<f32>& motion);

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

struct DatasetConfig {
    int train_count = 4000;
    int test_count = 800;
    int heldout_count = 200;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> heldout_pairs = {
        {"zigzag", "wave_left"}, {"circle", "raise_both"}};
};

struct LabeledSample {
    std::string id;
    std::string path;
    std::string gesture;
    std::string split; // train | test | heldout
    std::map<std::string, f64> params;
};

struct Dataset {
    DatasetConfig config;
    std::vector<Array<f32>> train, test, heldout;
    std::vector<LabeledSample> train_labels, test_labels, heldout_labels;
    std::array<f64, kChannels> norm_mean{};
    std::array<f64, kChannels> norm_std{};

    Array<f32> normalized(const Array<f32>& motion) const;
    Array<f32> denormalized(const Array<f32>& motion) const;
};

Dataset generate_dataset(const DatasetConfig& cfg);

// Directory layout: manifest.json, labels.jsonl, {train,test,heldout}.dmg1.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// FNV-1a over the manifest bytes; a pure function of config + seed.
uint64_t manifest_fingerprint(const std::string& dir);

// "DMG1" container: magic, u32 count, u32 L, u32 d_m, count*L*d_m f32 LE.
void write_dmg1(const std::string& path, std::span<const Array<f32>> motions);
std::vector<Array<f32>> read_dmg1(const std::string& path);

} // namespace dmg
