#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "adhdnet/errors.hpp"
#include "adhdnet/model.hpp"
#include "support.hpp"

using namespace adhdnet;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Compares against tests/golden/<name>; ADHDNET_UPDATE_GOLDEN=1 rewrites it.
void check_golden(const std::string& name, const std::string& actual) {
    const auto path = std::filesystem::path(ADHDNET_GOLDEN_DIR) / name;
    if (std::getenv("ADHDNET_UPDATE_GOLDEN")) {
        std::ofstream(path) << actual;
        return;
    }
    REQUIRE_MESSAGE(std::filesystem::exists(path), "missing golden file " << path);
    CHECK(read_file(path) == actual);
}

}  // namespace

TEST_CASE("default network maps [1,1,19,512] to [1,2]") {
    auto model = build_model(ModelConfig{});
    Tensor x(Shape{1, 1, 19, 512}, 0.1f);
    NoGradGuard ng;
    CHECK(model->forward(x, false).shape() == Shape{1, 2});
    CHECK_THROWS_AS(model->forward(Tensor(Shape{1, 1, 18, 512}), false), DimensionError);
}

TEST_CASE("describe output is stable") {
    check_golden("adhdeepnet_describe.txt", build_model(ModelConfig{})->describe());
    check_golden("eegnet_describe.txt", build_model([] {
                                            ModelConfig c;
                                            c.use_inxception = c.use_se = false;
                                            return c;
                                        }())->describe());
    check_golden("desk_describe.txt", build_model(ModelConfig::desk())->describe());
}

TEST_CASE("parameter counts are deterministic and ordered across ablations") {
    auto count = [](bool inc, bool se) {
        ModelConfig c;
        c.use_inxception = inc;
        c.use_se = se;
        return build_model(c)->parameter_count();
    };
    const auto full = count(true, true), no_se = count(true, false), no_inc = count(false, true),
               base = count(false, false);
    CHECK(full == count(true, true));
    CHECK(full > no_se);
    CHECK(no_se > no_inc);
    CHECK(no_inc > base);
    CHECK(full == 228482);
}

TEST_CASE("both blocks disabled resolves to the baseline topology") {
    ModelConfig c;
    c.use_inxception = c.use_se = false;
    CHECK(c.effective_architecture() == Architecture::EEGNet);
    CHECK_THROWS_AS(build_adhdeepnet(c), ConstructionError);
    auto m = build_model(c);
    CHECK(m->find("pool2") != nullptr);
    CHECK(m->find("inxception") == nullptr);
}

TEST_CASE("invalid configurations list every violation") {
    ModelConfig c;
    c.se_ratio = 7;
    c.temporal_filters = 0;
    CHECK(c.violations().size() >= 2);
    CHECK_THROWS_AS(c.validate(), ConstructionError);
}

TEST_CASE("config JSON round-trip") {
    ModelConfig c = ModelConfig::desk();
    c.dropout_rate = 0.4;
    c.use_se = false;
    const auto back = ModelConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
}

TEST_CASE("initialisation is seed-deterministic") {
    auto a = build_model(ModelConfig::desk()), b = build_model(ModelConfig::desk());
    a->initialize(5);
    b->initialize(5);
    const auto sa = a->state(), sb = b->state();
    for (std::size_t i = 0; i < sa.size(); ++i)
        CHECK(std::equal(sa[i].tensor.data().begin(), sa[i].tensor.data().end(), sb[i].tensor.data().begin()));
    b->initialize(6);
    CHECK_FALSE(std::equal(sa[0].tensor.data().begin(), sa[0].tensor.data().end(), b->state()[0].tensor.data().begin()));
}

TEST_CASE("probabilities sum to one") {
    auto model = build_model(ModelConfig::desk());
    Rng rng = make_rng(1);
    std::normal_distribution<float> nd(0, 10);
    std::vector<float> v(3 * 19 * 512);
    for (auto& x : v) x = nd(rng);
    const auto p = predict_batch(*model, Tensor(Shape{3, 1, 19, 512}, v));
    REQUIRE(p.size() == 3);
    for (const auto& row : p) {
        CHECK(row[0] + row[1] == doctest::Approx(1.0));
        CHECK(row[0] >= 0.0);
    }
}

TEST_CASE("trained model save/load reproduces predictions") {
    const auto dir = std::filesystem::temp_directory_path() / "adhdnet_test_model";
    std::filesystem::create_directories(dir);
    auto model = build_model(ModelConfig::desk());
    model->initialize(9);
    TrainingMeta meta{3, {{"learning_rate", 0.001}}, 42, 7};
    save_trained(dir / "m.adnw", TrainedModel::capture(*model, meta));
    const auto loaded = load_trained(dir / "m.adnw");
    CHECK(loaded.meta.fold == 3);
    CHECK(loaded.meta.epochs == 7);
    auto copy = loaded.instantiate();
    Tensor x(Shape{2, 1, 19, 512}, 0.5f);
    const auto p1 = predict_batch(*model, x), p2 = predict_batch(*copy, x);
    CHECK(p1 == p2);
    // state from a different topology is refused
    auto other = build_model(ModelConfig{});
    CHECK_THROWS_AS(other->load_state(loaded.weights), FormatError);
    std::filesystem::remove_all(dir);
}
