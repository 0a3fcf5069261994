#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "adhdnet/errors.hpp"
#include "adhdnet/tensor.hpp"

namespace adhdnet {

/// Canonical electrode order; row i of every recording is kElectrodes[i].
inline constexpr std::array<std::string_view, 19> kElectrodes = {
    "Fz", "Cz", "Pz", "C3", "T3", "C4", "T4", "Fp1", "Fp2", "F3",
    "F4", "F7", "F8", "P3", "P4", "T5", "T6", "O1", "O2"};
inline constexpr std::size_t kChannelCount = kElectrodes.size();
inline constexpr double kSampleRate = 128.0;
inline constexpr std::size_t kSegmentLength = 512;

/// Electrodes whose theta/beta balance carries the class signal.
inline constexpr std::array<std::string_view, 7> kFrontalElectrodes = {"Fp1", "Fp2", "F3", "F4", "F7", "F8", "Fz"};

std::size_t electrode_index(std::string_view name);

enum class Label { ADHD, HC };

std::string_view to_string(Label label);
Label label_from_string(std::string_view name);
/// (1,0) for ADHD, (0,1) for HC.
std::array<float, 2> label_vector(Label label);

using Signal = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EegRecording {
    std::string subject_id;
    Label label = Label::HC;
    double fs = kSampleRate;
    Signal samples;  // channels x p

    std::size_t sample_count() const { return static_cast<std::size_t>(samples.cols()); }
};

struct Trial {
    std::string subject_id;     // source subject; augmented copies keep it
    std::size_t segment = 0;    // 1-based s
    Label label = Label::HC;
    Signal window;              // 19 x 512
    bool augmented = false;
    int combo_id = 0;           // 1-based combo for augmented copies, else 0
};

struct Dataset {
    std::vector<EegRecording> recordings;

    std::vector<Trial> trials() const;
    const EegRecording& recording(std::string_view subject_id) const;
    std::map<std::string, Label> subject_labels() const;
};

/// Non-overlapping 512-sample windows; the trailing p mod 512 samples are
/// dropped.
std::vector<Trial> segment(const EegRecording& recording);

/// Stacks trials into [N,1,19,512] inputs and [N,2] one-hot labels.
Tensor stack_windows(std::span<const Trial* const> trials);
Tensor stack_labels(std::span<const Trial* const> trials);

struct SubjectSummary {
    std::string subject_id;
    Label label = Label::HC;
    std::size_t trials = 0;
};

std::vector<SubjectSummary> summarize(const Dataset& dataset);

struct FoldPlan {
    std::size_t k = 0;
    std::map<std::string, std::size_t> fold_of;         // subject -> 0-based fold
    std::vector<std::array<std::size_t, 2>> trial_counts;  // per fold {ADHD, HC}
    double global_adhd_fraction = 0.0;
    double max_deviation = 0.0;  // max |fold ADHD fraction - global|
    bool balance_enforced = false;

    std::vector<std::string> test_subjects(std::size_t fold) const;
    std::vector<std::string> train_subjects(std::size_t fold) const;
};

inline constexpr double kFoldBalanceTolerance = 0.10;

/// Class-stratified round-robin over shuffled subjects. The balance bound is
/// enforced only when every fold can receive two subjects of each class;
/// otherwise the best plan found is returned with a recorded warning.
FoldPlan plan_folds(std::span<const SubjectSummary> subjects, std::size_t k, std::uint64_t seed);
FoldPlan plan_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed);

/// Subject-disjoint bipartition with both classes in each half.
std::pair<std::vector<std::string>, std::vector<std::string>> split_in_two(
    std::span<const SubjectSummary> subjects, std::uint64_t seed);

/// Class-stratified held-out slice of about `fraction` of the subjects, at
/// least one per class when that class has two or more subjects. Returns
/// {kept, held_out}.
std::pair<std::vector<std::string>, std::vector<std::string>> hold_out(
    std::span<const SubjectSummary> subjects, double fraction, std::uint64_t seed);

/// Argmax of the summed probability pairs; ties go to ADHD.
Label aggregate_subject(std::span<const std::array<double, 2>> predictions);

struct SyntheticSpec {
    std::size_t subjects_per_class = 10;
    double seconds_per_subject = 120.0;
    double separation = 0.8;
    std::uint64_t seed = 0;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// Reads a JSON manifest {"subjects":[{subject_id,path,label,fs}]}. Paths are
/// relative to the manifest directory. All per-file problems are collected
/// into one IngestionError.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes one .f32 file per subject plus manifest.json into `dir`; returns
/// the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace adhdnet
