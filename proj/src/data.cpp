#include "adhdnet/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "adhdnet/diagnostics.hpp"
#include "adhdnet/progress.hpp"
#include "adhdnet/random.hpp"
#include "adhdnet/serialize.hpp"
#include "json.hpp"

namespace adhdnet {
namespace {

using json = nlohmann::json;

struct ClassLists {
    std::vector<const SubjectSummary*> adhd, hc;
};

ClassLists by_class(std::span<const SubjectSummary> subjects) {
    ClassLists lists;
    for (const auto& s : subjects) (s.label == Label::ADHD ? lists.adhd : lists.hc).push_back(&s);
    auto by_id = [](const SubjectSummary* a, const SubjectSummary* b) { return a->subject_id < b->subject_id; };
    std::sort(lists.adhd.begin(), lists.adhd.end(), by_id);
    std::sort(lists.hc.begin(), lists.hc.end(), by_id);
    return lists;
}

std::vector<std::string> ids(const std::vector<const SubjectSummary*>& list) {
    std::vector<std::string> out;
    for (const auto* s : list) out.push_back(s->subject_id);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::size_t electrode_index(std::string_view name) {
    for (std::size_t i = 0; i < kElectrodes.size(); ++i)
        if (kElectrodes[i] == name) return i;
    throw ArgumentError("unknown electrode '" + std::string(name) + "'");
}

std::string_view to_string(Label label) { return label == Label::ADHD ? "ADHD" : "HC"; }

Label label_from_string(std::string_view name) {
    if (name == "ADHD") return Label::ADHD;
    if (name == "HC") return Label::HC;
    throw ArgumentError("unknown label '" + std::string(name) + "' (expected ADHD or HC)");
}

std::array<float, 2> label_vector(Label label) {
    return label == Label::ADHD ? std::array<float, 2>{1.0f, 0.0f} : std::array<float, 2>{0.0f, 1.0f};
}

// --- segmentation -----------------------------------------------------------

std::vector<Trial> segment(const EegRecording& recording) {
    const std::size_t p = recording.sample_count();
    if (p < kSegmentLength) {
        throw IngestionError(recording.subject_id + ": " + std::to_string(p) + " samples, need at least " +
                             std::to_string(kSegmentLength));
    }
    const std::size_t count = p / kSegmentLength;
    std::vector<Trial> out;
    out.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        Trial t;
        t.subject_id = recording.subject_id;
        t.segment = s + 1;
        t.label = recording.label;
        t.window = recording.samples.middleCols(Eigen::Index(s * kSegmentLength), Eigen::Index(kSegmentLength));
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Trial> Dataset::trials() const {
    std::vector<Trial> out;
    for (const auto& r : recordings) {
        auto t = segment(r);
        std::move(t.begin(), t.end(), std::back_inserter(out));
    }
    return out;
}

const EegRecording& Dataset::recording(std::string_view subject_id) const {
    for (const auto& r : recordings)
        if (r.subject_id == subject_id) return r;
    throw ArgumentError("no subject '" + std::string(subject_id) + "'");
}

std::map<std::string, Label> Dataset::subject_labels() const {
    std::map<std::string, Label> out;
    for (const auto& r : recordings) out[r.subject_id] = r.label;
    return out;
}

Tensor stack_windows(std::span<const Trial* const> trials) {
    if (trials.empty()) throw ArgumentError("stack_windows: no trials");
    const auto rows = std::size_t(trials.front()->window.rows()), cols = std::size_t(trials.front()->window.cols());
    Tensor out({trials.size(), 1, rows, cols});
    auto dst = out.mutable_data();
    const std::size_t stride = rows * cols;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto& w = trials[i]->window;
        if (std::size_t(w.rows()) != rows || std::size_t(w.cols()) != cols)
            throw DimensionError("stack_windows: trial windows differ in shape");
        std::copy(w.data(), w.data() + stride, dst.begin() + std::ptrdiff_t(i * stride));
    }
    return out;
}

Tensor stack_labels(std::span<const Trial* const> trials) {
    Tensor out({trials.size(), 2});
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const auto v = label_vector(trials[i]->label);
        dst[2 * i] = v[0];
        dst[2 * i + 1] = v[1];
    }
    return out;
}

std::vector<SubjectSummary> summarize(const Dataset& dataset) {
    std::vector<SubjectSummary> out;
    for (const auto& r : dataset.recordings) out.push_back({r.subject_id, r.label, r.sample_count() / kSegmentLength});
    return out;
}

// --- fold planning ----------------------------------------------------------

std::vector<std::string> FoldPlan::test_subjects(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f == fold) out.push_back(id);
    return out;
}

std::vector<std::string> FoldPlan::train_subjects(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f != fold) out.push_back(id);
    return out;
}

FoldPlan plan_folds(std::span<const SubjectSummary> subjects, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw PlanningError("fold count must be at least 2");
    if (subjects.size() < k) {
        throw PlanningError(std::to_string(subjects.size()) + " subjects cannot fill " + std::to_string(k) +
                            " folds");
    }
    {
        std::vector<std::string> seen;
        for (const auto& s : subjects) seen.push_back(s.subject_id);
        std::sort(seen.begin(), seen.end());
        if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
            throw PlanningError("duplicate subject ids in fold planning input");
    }
    const ClassLists base = by_class(subjects);
    std::size_t total_adhd = 0, total = 0;
    for (const auto& s : subjects) {
        total += s.trials;
        if (s.label == Label::ADHD) total_adhd += s.trials;
    }
    const double global = total ? double(total_adhd) / double(total) : 0.0;
    const bool enforce = base.adhd.size() >= 2 * k && base.hc.size() >= 2 * k;

    FoldPlan best;
    best.max_deviation = std::numeric_limits<double>::infinity();
    constexpr int kAttempts = 1000;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        Rng rng = make_rng(derive_seed(seed, std::uint64_t(attempt)));
        ClassLists lists = base;
        std::shuffle(lists.adhd.begin(), lists.adhd.end(), rng);
        std::shuffle(lists.hc.begin(), lists.hc.end(), rng);
        // ADHD subjects are dealt first; HC continue from the next fold so
        // fold sizes differ by at most one.
        const std::size_t start = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
        FoldPlan plan;
        plan.k = k;
        plan.trial_counts.assign(k, {0, 0});
        std::size_t cursor = start;
        for (const auto* list : {&lists.adhd, &lists.hc}) {
            for (const auto* s : *list) {
                plan.fold_of[s->subject_id] = cursor;
                plan.trial_counts[cursor][s->label == Label::ADHD ? 0 : 1] += s->trials;
                cursor = (cursor + 1) % k;
            }
        }
        plan.global_adhd_fraction = global;
        plan.max_deviation = 0.0;
        for (const auto& c : plan.trial_counts) {
            const std::size_t n = c[0] + c[1];
            const double frac = n ? double(c[0]) / double(n) : global;
            plan.max_deviation = std::max(plan.max_deviation, std::abs(frac - global));
        }
        if (plan.max_deviation < best.max_deviation) best = std::move(plan);
        if (best.max_deviation <= kFoldBalanceTolerance) break;
    }
    best.balance_enforced = enforce;
    if (best.max_deviation > kFoldBalanceTolerance) {
        std::ostringstream msg;
        msg << "fold plan: best ADHD trial fraction deviation " << best.max_deviation << " exceeds "
            << kFoldBalanceTolerance << " (global fraction " << global << ")";
        if (enforce) throw PlanningError(msg.str() + " after " + std::to_string(kAttempts) + " attempts");
        record_warning(msg.str() + "; too few subjects per class to enforce, using best plan");
    }
    return best;
}

FoldPlan plan_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    const auto s = summarize(dataset);
    return plan_folds(s, k, seed);
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_in_two(std::span<const SubjectSummary> subjects,
                                                                           std::uint64_t seed) {
    ClassLists lists = by_class(subjects);
    if (lists.adhd.size() < 2 || lists.hc.size() < 2) {
        throw PlanningError("inner split needs two subjects of each class, have " + std::to_string(lists.adhd.size()) +
                            " ADHD and " + std::to_string(lists.hc.size()) + " HC");
    }
    Rng rng = make_rng(seed);
    std::shuffle(lists.adhd.begin(), lists.adhd.end(), rng);
    std::shuffle(lists.hc.begin(), lists.hc.end(), rng);
    std::vector<const SubjectSummary*> first, second;
    // Alternate within each class; the HC deal starts on the half that the
    // ADHD deal left smaller.
    for (std::size_t i = 0; i < lists.adhd.size(); ++i) (i % 2 == 0 ? first : second).push_back(lists.adhd[i]);
    const bool offset = lists.adhd.size() % 2 == 1;
    for (std::size_t i = 0; i < lists.hc.size(); ++i)
        ((i % 2 == 0) != offset ? first : second).push_back(lists.hc[i]);
    return {ids(first), ids(second)};
}

std::pair<std::vector<std::string>, std::vector<std::string>> hold_out(std::span<const SubjectSummary> subjects,
                                                                       double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("hold_out fraction must lie in (0, 1)");
    ClassLists lists = by_class(subjects);
    Rng rng = make_rng(seed);
    std::vector<const SubjectSummary*> kept, held;
    for (auto* list : {&lists.adhd, &lists.hc}) {
        std::shuffle(list->begin(), list->end(), rng);
        std::size_t n_held = std::size_t(std::lround(fraction * double(list->size())));
        if (list->size() >= 2) n_held = std::clamp<std::size_t>(n_held, 1, list->size() - 1);
        else n_held = 0;
        for (std::size_t i = 0; i < list->size(); ++i) (i < n_held ? held : kept).push_back((*list)[i]);
    }
    return {ids(kept), ids(held)};
}

Label aggregate_subject(std::span<const std::array<double, 2>> predictions) {
    if (predictions.empty()) throw ArgumentError("aggregate_subject: no predictions");
    double adhd = 0.0, hc = 0.0;
    for (const auto& p : predictions) {
        adhd += p[0];
        hc += p[1];
    }
    return adhd >= hc ? Label::ADHD : Label::HC;
}

// --- file ingestion ---------------------------------------------------------

namespace {

Signal read_f32(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open");
    in.seekg(0, std::ios::end);
    const auto bytes = std::size_t(in.tellg());
    in.seekg(0);
    const std::size_t row_bytes = kChannelCount * sizeof(float);
    if (bytes == 0 || bytes % row_bytes != 0) {
        throw IngestionError(std::to_string(bytes) + " bytes is not a whole number of " +
                             std::to_string(kChannelCount) + "-channel float32 columns");
    }
    const std::size_t p = bytes / row_bytes;
    std::vector<unsigned char> raw(bytes);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(bytes));
    if (!in) throw IngestionError("short read");
    Signal out(static_cast<Eigen::Index>(kChannelCount), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < kChannelCount * p; ++i) {
        const unsigned char* b = raw.data() + 4 * i;
        const std::uint32_t v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                                std::uint32_t(b[3]) << 24;
        out.data()[i] = std::bit_cast<float>(v);
    }
    return out;
}

Signal read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open");
    std::vector<std::vector<float>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<float> row;
        std::stringstream fields(line);
        std::string field;
        bool first = true;
        while (std::getline(fields, field, ',')) {
            const auto b = field.find_first_not_of(" \t"), e = field.find_last_not_of(" \t");
            field = b == std::string::npos ? std::string() : field.substr(b, e - b + 1);
            char* end = nullptr;
            const float v = std::strtof(field.c_str(), &end);
            if (end == field.c_str() || *end != '\0') {
                // An optional leading electrode name must match the canonical order.
                if (first) {
                    const std::size_t expect = rows.size();
                    if (expect >= kChannelCount || field != kElectrodes[expect]) {
                        throw IngestionError("line " + std::to_string(line_no) + " names electrode '" + field +
                                             "', expected '" +
                                             std::string(expect < kChannelCount ? kElectrodes[expect] : "<none>") +
                                             "'");
                    }
                    first = false;
                    continue;
                }
                throw IngestionError("line " + std::to_string(line_no) + ": non-numeric field '" + field + "'");
            }
            first = false;
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    if (rows.size() != kChannelCount) {
        throw IngestionError(std::to_string(rows.size()) + " channel rows, expected " +
                             std::to_string(kChannelCount));
    }
    const std::size_t p = rows.front().size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != p)
            throw IngestionError("channel " + std::string(kElectrodes[r]) + " has " + std::to_string(rows[r].size()) +
                                 " samples, channel Fz has " + std::to_string(p));
    }
    Signal out(static_cast<Eigen::Index>(kChannelCount), static_cast<Eigen::Index>(p));
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(rows[r].begin(), rows[r].end(), out.row(Eigen::Index(r)).data());
    return out;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IngestionError("cannot open manifest " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw IngestionError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
    }
    if (!manifest.contains("subjects") || !manifest["subjects"].is_array())
        throw IngestionError("manifest " + manifest_path.string() + " lacks a \"subjects\" array");
    const auto base = manifest_path.parent_path();
    Dataset ds;
    std::vector<std::string> problems;
    std::set<std::string> seen_ids;
    std::size_t index = 0;
    for (const auto& entry : manifest["subjects"]) {
        const std::string where = "subject #" + std::to_string(index++);
        std::string context = where;
        try {
            EegRecording r;
            r.subject_id = entry.at("subject_id").get<std::string>();
            if (!seen_ids.insert(r.subject_id).second) throw IngestionError("duplicate subject_id " + r.subject_id);
            const auto rel = entry.at("path").get<std::string>();
            const auto path = base / rel;
            context = path.string();
            r.label = label_from_string(entry.at("label").get<std::string>());
            r.fs = entry.value("fs", kSampleRate);
            if (r.fs != kSampleRate)
                throw IngestionError("declared fs " + std::to_string(r.fs) + " Hz, only 128 Hz is supported");
            if (entry.contains("channels")) {
                const auto names = entry["channels"].get<std::vector<std::string>>();
                bool ok = names.size() == kChannelCount;
                for (std::size_t i = 0; ok && i < names.size(); ++i) ok = names[i] == kElectrodes[i];
                if (!ok) throw IngestionError("channel list differs from the canonical 19-electrode order");
            }
            const auto ext = path.extension().string();
            if (ext == ".csv") r.samples = read_csv(path);
            else if (ext == ".f32" || ext == ".bin") r.samples = read_f32(path);
            else throw IngestionError("unsupported file extension '" + ext + "'");
            if (r.sample_count() < kSegmentLength) {
                throw IngestionError(std::to_string(r.sample_count()) + " samples, need at least " +
                                     std::to_string(kSegmentLength));
            }
            if (!r.samples.allFinite()) throw IngestionError("non-finite sample values");
            ds.recordings.push_back(std::move(r));
        } catch (const IngestionError& e) {
            problems.push_back(context + ": " + e.what());
        } catch (const ArgumentError& e) {
            problems.push_back(context + ": " + e.what());
        } catch (const json::exception& e) {
            problems.push_back(context + ": malformed manifest entry: " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = std::to_string(problems.size()) + " ingestion problem(s):";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw IngestionError(msg);
    }
    std::size_t trials[2] = {0, 0}, subjects[2] = {0, 0};
    for (const auto& r : ds.recordings) {
        const int c = r.label == Label::ADHD ? 0 : 1;
        ++subjects[c];
        trials[c] += r.sample_count() / kSegmentLength;
    }
    emit_progress({{"event", "dataset_loaded"},
                   {"manifest", manifest_path.string()},
                   {"subjects_adhd", subjects[0]},
                   {"subjects_hc", subjects[1]},
                   {"trials_adhd", trials[0]},
                   {"trials_hc", trials[1]}});
    return ds;
}

std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json subjects = json::array();
    for (const auto& r : dataset.recordings) {
        const std::string file = r.subject_id + ".f32";
        std::string bytes(std::size_t(r.samples.size()) * sizeof(float), '\0');
        for (Eigen::Index i = 0; i < r.samples.size(); ++i) {
            const std::uint32_t v = std::bit_cast<std::uint32_t>(r.samples.data()[i]);
            for (int b = 0; b < 4; ++b) bytes[std::size_t(i) * 4 + std::size_t(b)] = char((v >> (8 * b)) & 0xffu);
        }
        write_file_atomic(dir / file, bytes);
        subjects.push_back({{"subject_id", r.subject_id},
                            {"path", file},
                            {"label", std::string(to_string(r.label))},
                            {"fs", r.fs}});
    }
    const auto manifest = dir / "manifest.json";
    write_file_atomic(manifest, json{{"subjects", subjects}}.dump(2) + "\n");
    return manifest;
}

}  // namespace adhdnet
