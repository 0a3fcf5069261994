#include "adhdnet/augment.hpp"

#include <sstream>

#include "adhdnet/errors.hpp"

namespace adhdnet {
namespace {

// sigma * z with z ~ N(0,1), one draw per window element.
Signal gaussian_like(const Signal& shape, double sigma, Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Signal out(shape.rows(), shape.cols());
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<float>(sigma * z(rng));
    return out;
}

Trial with_noise(const Trial& trial, int m, const Signal& noise, int combo_id) {
    Trial t;
    t.subject_id = trial.subject_id;
    t.segment = trial.segment;
    t.label = trial.label;
    t.window = trial.window + static_cast<float>(m) * noise;
    t.augmented = true;
    t.combo_id = combo_id;
    return t;
}

void check_entry(const AugEntry& e) {
    if (e.m < 1) throw ArgumentError("augmentation magnification must be a positive integer");
    if (!(e.sigma > 0.0)) throw ArgumentError("augmentation sigma must be positive");
}

}  // namespace

std::string AugCombo::violation() const {
    if (entries.empty() || entries.size() > 2) return "a combo holds one or two (m, sigma) entries";
    for (const auto& e : entries) {
        if (e.m < 1) return "magnification must be a positive integer";
        if (!(e.sigma > 0.0)) return "sigma must be positive";
    }
    if (is_double() && (entries[0].m == entries[1].m || entries[0].sigma == entries[1].sigma))
        return "a double combo needs distinct magnifications and distinct sigmas";
    return {};
}

std::string AugCombo::label() const {
    std::ostringstream out;
    out << 'C' << id << '(';
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i) out << "; ";
        out << "m=" << entries[i].m << ",s=" << entries[i].sigma;
    }
    out << ')';
    return out.str();
}

nlohmann::json AugCombo::to_json() const {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& x : entries) e.push_back({{"m", x.m}, {"sigma", x.sigma}});
    return {{"id", id}, {"entries", e}};
}

Trial augment_trial(const Trial& trial, int m, double sigma, Rng& rng) {
    check_entry({m, sigma});
    return with_noise(trial, m, gaussian_like(trial.window, sigma, rng), 0);
}

std::vector<AugCombo> enumerate_combos(std::span<const int> magnifications, std::span<const double> sigmas) {
    if (magnifications.empty() || sigmas.empty()) throw ArgumentError("combo sweep needs magnifications and sigmas");
    std::vector<AugCombo> out;
    int id = 0;
    for (int m : magnifications)
        for (double s : sigmas) out.push_back({++id, {{m, s}}});
    if (magnifications.size() < 2 || sigmas.size() < 2) return out;
    const std::size_t nm = magnifications.size(), ns = sigmas.size();
    for (std::size_t i = 0; i < nm; ++i) {
        for (std::size_t j = 0; j < ns; ++j) {
            out.push_back({++id,
                           {{magnifications[i], sigmas[j]},
                            {magnifications[(i + 1) % nm], sigmas[(j + 1) % ns]}}});
        }
    }
    for (const auto& c : out)
        if (auto v = c.violation(); !v.empty()) throw ArgumentError(c.label() + ": " + v);
    return out;
}

std::vector<AugCombo> select_combos(const nlohmann::json& selection) {
    const auto all = enumerate_combos();
    if (selection.is_null()) return all;
    if (!selection.is_array()) throw ArgumentError("combo selection must be an array");
    std::vector<AugCombo> out;
    for (const auto& item : selection) {
        if (item.is_number_integer()) {
            const int id = item.get<int>();
            if (id < 1 || id > int(all.size()))
                throw ArgumentError("combo id " + std::to_string(id) + " outside 1.." + std::to_string(all.size()));
            out.push_back(all[std::size_t(id - 1)]);
        } else if (item.is_object() && item.contains("entries")) {
            AugCombo c;
            c.id = item.value("id", int(all.size() + out.size() + 1));
            for (const auto& e : item.at("entries")) c.entries.push_back({e.at("m").get<int>(), e.at("sigma").get<double>()});
            if (auto v = c.violation(); !v.empty()) throw ArgumentError("combo " + c.label() + ": " + v);
            out.push_back(std::move(c));
        } else {
            throw ArgumentError("combo selection items are ids or {\"entries\": [...]} objects");
        }
    }
    return out;
}

std::uint64_t trial_stream(std::uint64_t seed, const Trial& trial) {
    return derive_seed(seed, stable_hash(trial.subject_id + "#" + std::to_string(trial.segment)));
}

std::vector<Trial> augment_training_set(std::span<const Trial* const> train, const AugCombo& combo,
                                        std::uint64_t seed) {
    if (auto v = combo.violation(); !v.empty()) throw ArgumentError(combo.label() + ": " + v);
    std::vector<Trial> out;
    out.reserve(train.size() * (combo.is_double() ? 5 : 2));
    for (const Trial* t : train) out.push_back(*t);
    for (const Trial* t : train) {
        if (t->augmented) throw ArgumentError("augment_training_set: source trials must be unaugmented");
        Rng rng = make_rng(trial_stream(seed, *t));
        if (!combo.is_double()) {
            const auto& e = combo.entries[0];
            out.push_back(with_noise(*t, e.m, gaussian_like(t->window, e.sigma, rng), combo.id));
            continue;
        }
        const Signal noise[2] = {gaussian_like(t->window, combo.entries[0].sigma, rng),
                                 gaussian_like(t->window, combo.entries[1].sigma, rng)};
        for (const auto& e : combo.entries)
            for (const auto& n : noise) out.push_back(with_noise(*t, e.m, n, combo.id));
    }
    return out;
}

}  // namespace adhdnet
