#include "doctest.h"
#include "oracles.hpp"

#include "fusionbench/optimizer.hpp"
#include "fusionbench/trainer.hpp"

#include <cmath>

using namespace fusionbench;

namespace {

Param<double> scalar_param(double value, double grad) {
    Param<double> p;
    p.name = "theta";
    p.group = "g";
    p.value = Tensor<double>::vector({value});
    p.grad = Tensor<double>::vector({grad});
    return p;
}

Dataset small_synth(std::size_t n, double signal, std::uint64_t seed) {
    SynthParams p;
    p.n_patients = n;
    p.signal_strength = signal;
    p.positive_rate = 0.3;
    p.seed = seed;
    p.k_min = 2;
    p.k_max = 5;
    const Dataset ds = synth_generate(p);
    return standardize(ds, ds);
}

Schedule short_schedule(std::size_t epochs, std::size_t warmup) {
    Schedule s;
    s.total_epochs = epochs;
    s.warmup_epochs = warmup;
    s.batch_size = 64;
    return s;
}

using Snapshot = std::vector<std::pair<std::string, Tensor<float>>>;

Snapshot snapshot(const Model<float>& m) {
    Snapshot s;
    for (const auto& p : m.graph().params()) s.emplace_back(p.group, p.value);
    return s;
}

} // namespace

TEST_CASE("adamw leaves parameters alone with zero gradient and no decay") {
    AdamWHyper h;
    h.weight_decay = 0.0;
    auto p = scalar_param(0.7, 0.0);
    AdamState<double> st;
    for (int i = 0; i < 5; ++i) adamw_step(p, st, h);
    CHECK(p.value[0] == 0.7);
    CHECK(st.t == 5);
}

TEST_CASE("adamw first step on a scalar matches the hand-evaluated update") {
    AdamWHyper h;
    h.lr = 0.1;
    h.weight_decay = 0.0;
    auto p = scalar_param(1.0, 1.0);
    AdamState<double> st;
    adamw_step(p, st, h);
    // m_hat = 1, v_hat = 1
    const double expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
    CHECK(p.value[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adamw weight decay is decoupled from the gradient") {
    AdamWHyper h;
    h.lr = 0.05;
    h.weight_decay = 0.01;
    auto p = scalar_param(1.0, 0.0);
    AdamState<double> st;
    adamw_step(p, st, h);
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.05 * 0.01).epsilon(1e-15));
}

TEST_CASE("adamw with zero learning rate is the identity") {
    AdamWHyper h;
    h.lr = 0.0;
    auto p = scalar_param(2.5, 3.0);
    AdamState<double> st;
    for (int i = 0; i < 3; ++i) adamw_step(p, st, h);
    CHECK(p.value[0] == 2.5);
}

TEST_CASE("adamw without decay follows the Adam recursion over many steps") {
    AdamWHyper h;
    h.lr = 0.01;
    h.weight_decay = 0.0;
    auto p = scalar_param(0.3, 0.0);
    AdamState<double> st;
    double theta = 0.3;
    double m = 0.0;
    double v = 0.0;
    Rng rng(1);
    for (int t = 1; t <= 50; ++t) {
        const double g = rng.normal();
        p.grad[0] = g;
        adamw_step(p, st, h);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        theta -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(p.value[0] == doctest::Approx(theta).epsilon(1e-12));
    }
}

TEST_CASE("adamw skips frozen parameters and rejects non-finite gradients") {
    AdamWHyper h;
    auto p = scalar_param(1.0, 1.0);
    p.trainable = false;
    AdamState<double> st;
    adamw_step(p, st, h);
    CHECK(p.value[0] == 1.0);
    CHECK(st.t == 0);

    auto q = scalar_param(1.0, std::nan(""));
    AdamState<double> sq;
    CHECK_THROWS_AS(adamw_step(q, sq, h), NumericError);

    std::vector<Param<double>> params{scalar_param(1.0, 1.0), scalar_param(1.0, 1.0)};
    params[1].trainable = false;
    AdamW<double> opt(h);
    opt.step(params);
    CHECK(opt.state(0).has_value());
    CHECK_FALSE(opt.state(1).has_value());
    CHECK(params[1].value[0] == 1.0);
}

TEST_CASE("optimizer and schedule settings are validated") {
    AdamWHyper h;
    h.lr = -1.0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = AdamWHyper{};
    h.beta1 = 1.0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    Schedule s;
    s.warmup_epochs = 100;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = Schedule{};
    s.batch_size = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = Schedule{};
    CHECK(s.phase(20) == 1);
    CHECK(s.phase(21) == 2);
}

TEST_CASE("phase membership of parameter groups") {
    for (const char* g : {"f_c", "f_c_2", "g_c", "g_c_1", "g_c_2"}) {
        CAPTURE(g);
        CHECK(trains_in_phase(g, 1));
    }
    for (const char* g : {"f_i", "f_i_2", "g", "g_f", "g_i", "g_i_1", "g_i_2", "g_i_to_c"}) {
        CAPTURE(g);
        CHECK_FALSE(trains_in_phase(g, 1));
        CHECK(trains_in_phase(g, 2));
    }
    CHECK_FALSE(trains_in_phase("f_c", 2));
    CHECK_FALSE(trains_in_phase("f_c_2", 2));
    CHECK(trains_in_phase("g_c", 2));
}

TEST_CASE("warmup trains only the clinical side and the encoder then stays frozen") {
    const Dataset ds = small_synth(200, 6.0, 1);
    FusionConfig c;
    c.extra_supervision = c.clinical_prediction = c.dense_fusion = true;
    c.dim_clinical_repr = 16;
    Model<float> model(c);
    const Snapshot initial = snapshot(model);
    Snapshot at_warmup_end;
    const Schedule s = short_schedule(8, 3);
    (void)train_fold(model, ds, ds, s, 5, [&](std::size_t epoch, const Model<float>& m) {
        if (epoch == 3) at_warmup_end = snapshot(m);
    });
    const Snapshot final_state = snapshot(model);
    REQUIRE(at_warmup_end.size() == initial.size());
    for (std::size_t i = 0; i < initial.size(); ++i) {
        const std::string& g = initial[i].first;
        CAPTURE(g);
        const GroupRole role = group_role(g);
        if (role == GroupRole::clinical_encoder) {
            CHECK_FALSE(at_warmup_end[i].second == initial[i].second);
            CHECK(final_state[i].second == at_warmup_end[i].second);
        } else if (role == GroupRole::clinical_head) {
            CHECK_FALSE(at_warmup_end[i].second == initial[i].second);
        } else {
            CHECK(at_warmup_end[i].second == initial[i].second);
            CHECK_FALSE(final_state[i].second == initial[i].second);
        }
    }
}

TEST_CASE("training history records every epoch with finite losses") {
    const Dataset ds = small_synth(200, 6.0, 2);
    FusionConfig c;
    c.clinical_prediction = true;
    c.dim_clinical_repr = 16;
    Model<float> model(c);
    const Schedule s = short_schedule(6, 2);
    const TrainHistory h = train_fold(model, ds, ds, s, 9);
    REQUIRE(h.epochs.size() == 6);
    for (const auto& e : h.epochs) {
        CHECK(std::isfinite(e.loss));
        CHECK(e.val_auc.has_value());
        CHECK(e.resampled_positives == e.resampled_negatives);
        CHECK(e.resampled_positives == ds.size() - ds.positives());
        double sum = 0.0;
        for (const auto& [name, v] : e.terms) sum += v;
        CHECK(e.loss == doctest::Approx(sum).epsilon(1e-9));
        // the clinical-prediction term only enters after warmup
        CHECK(e.terms.size() == (e.phase == 1 ? 1u : 2u));
    }
    CHECK(h.epochs[0].terms[0].first == "y_hat");
    CHECK(h.epochs[5].terms[1].first == "x_hat_c");
    const std::string jsonl = h.to_jsonl(false);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 6);
    CHECK(jsonl.find("seconds") == std::string::npos);
    CHECK(h.to_jsonl(true).find("seconds") != std::string::npos);
}

TEST_CASE("training on separable data lowers the loss") {
    const Dataset ds = small_synth(300, 8.0, 3);
    FusionConfig c;
    c.dim_clinical_repr = 32;
    Model<float> model(c);
    const TrainHistory h = train_fold(model, ds, ds, short_schedule(25, 5), 2);
    CHECK(h.epochs.back().loss < h.epochs.front().loss);
    const auto scores = predict(model, ds);
    REQUIRE(scores.size() == ds.size());
    for (double p : scores) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
    const auto labels = ds.labels();
    CHECK(oracle::brute_force_auc(scores, labels) > 0.9);
}

TEST_CASE("training is deterministic for fixed seeds") {
    const Dataset ds = small_synth(150, 4.0, 4);
    FusionConfig c;
    c.extra_supervision = true;
    c.dim_clinical_repr = 16;
    c.seed = 3;
    Model<float> a(c);
    Model<float> b(c);
    const Schedule s = short_schedule(5, 2);
    const auto ha = train_fold(a, ds, ds, s, 11);
    const auto hb = train_fold(b, ds, ds, s, 11);
    CHECK(ha.to_jsonl(false) == hb.to_jsonl(false));
    for (std::size_t i = 0; i < a.graph().params().size(); ++i) {
        CHECK(a.graph().params()[i].value == b.graph().params()[i].value);
    }
}

TEST_CASE("a single-class training split is a resampling error") {
    Dataset ds = small_synth(100, 4.0, 5);
    for (auto& r : ds.records) r.label = 0;
    Model<float> model(FusionConfig{});
    CHECK_THROWS_AS(train_fold(model, ds, ds, short_schedule(2, 1), 0), ResamplingError);
}

TEST_CASE("a numeric failure reports the epoch and batch") {
    const Dataset ds = small_synth(100, 4.0, 6);
    Model<float> model(FusionConfig{});
    model.graph().param("f_c.bias").value[0] = std::nanf("");
    try {
        (void)train_fold(model, ds, ds, short_schedule(2, 1), 0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 1, batch 0") != std::string::npos);
        CHECK(msg.find("f_c") != std::string::npos);
    }
}
