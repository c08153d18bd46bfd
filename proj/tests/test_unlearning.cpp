#include <doctest.h>

#include <numeric>

#include "test_support.hpp"
#include "unlearn/unlearning.hpp"

using namespace unlearn;
using namespace test_support;
using numerics::ParamVector;

namespace {

// Per-sample function with fixed, theta-independent gradients, for
// hand-checkable update arithmetic.
class FixedGrads final : public numerics::PerSampleFunction {
public:
    explicit FixedGrads(std::vector<double> grads) : grads_(std::move(grads)) {}
    int dim() const override { return 1; }
    int sample_count() const override { return static_cast<int>(grads_.size()); }
    double sample_value(const ParamVector&, int k) const override { return grads_[k]; }
    double sample_value_and_grad(const ParamVector&, int k, ParamVector& grad) const override {
        grad.resize(1);
        grad[0] = grads_[static_cast<std::size_t>(k)];
        return grads_[static_cast<std::size_t>(k)];
    }
    void sample_hvp(const ParamVector&, int, const ParamVector&, ParamVector& out) const override {
        out = ParamVector::Zero(1);
    }

private:
    std::vector<double> grads_;
};

struct ConvexInstance {
    models::ModelSpec spec;
    datasets::Dataset data;
    models::Checkpoint optimum;  // Newton-converged on data
};

ConvexInstance make_convex_instance(int n, int d, double l2, std::uint64_t seed,
                                    double grad_tol = 1e-12) {
    ConvexInstance inst;
    inst.spec.kind = models::ModelKind::logistic;
    inst.spec.input_dim = d;
    inst.spec.classes = 2;
    inst.spec.l2 = l2;
    inst.data = datasets::gen_blobs(n, d, 2, 1.5, seed);
    training::NewtonOptions opts;
    opts.grad_tol = grad_tol;
    inst.optimum.spec = inst.spec;
    inst.optimum.params =
        training::newton_fit(inst.spec, inst.data, models::init_params(inst.spec, seed), opts);
    return inst;
}

}  // namespace

TEST_CASE("iau_step hand arithmetic") {
    // theta = 2; remain gradients {+1, +1}; forget gradient {-3}; eta = 0.1:
    // theta' = 2 - 0.1·((1+1) - (-3)) = 1.5
    FixedGrads fn({1.0, 1.0, -3.0});
    ParamVector theta(1);
    theta << 2.0;
    const int forget[] = {2};
    auto partition = datasets::make_partition(3, forget);
    ParamVector updated = unlearning::iau_step(fn, theta, partition, 0.1);
    CHECK(updated[0] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("incremental_step hand arithmetic and zero-gradient forgetting") {
    FixedGrads fn({1.0, 1.0, -3.0});
    ParamVector theta(1);
    theta << 2.0;
    const int forget[] = {2};
    ParamVector updated = unlearning::incremental_step(fn, theta, forget, 0.1);
    CHECK(updated[0] == doctest::Approx(1.7).epsilon(1e-15));  // 2 + 0.1·(-3)

    FixedGrads zero({0.0, 1.0});
    const int first[] = {0};
    ParamVector unchanged = unlearning::incremental_step(zero, theta, first, 0.5);
    CHECK(unchanged[0] == 2.0);
}

TEST_CASE("forgetting everything turns iau into pure ascent on the forget sum") {
    FixedGrads fn({0.5, -1.5, 2.0});
    ParamVector theta(1);
    theta << 1.0;
    const int all[] = {0, 1, 2};
    auto partition = datasets::make_partition(3, all);
    CHECK(partition.remain_indices.empty());
    ParamVector via_iau = unlearning::iau_step(fn, theta, partition, 0.2);
    ParamVector via_incremental = unlearning::incremental_step(fn, theta, all, 0.2);
    CHECK(via_iau == via_incremental);
    CHECK(via_iau[0] == doctest::Approx(1.0 + 0.2 * 1.0).epsilon(1e-15));
}

TEST_CASE("unlearn request validation") {
    FixedGrads fn({1.0, 2.0});
    ParamVector theta(1);
    theta << 0.0;
    const int forget[] = {0};
    auto partition = datasets::make_partition(2, forget);

    try {
        unlearning::iau_step(fn, theta, datasets::Partition{{}, {0, 1}}, 0.1);
        FAIL("expected EmptyForgetSet");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::empty_forget_set);
    }
    try {
        unlearning::iau_step(fn, theta, partition, 0.0);
        FAIL("expected BadStep");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::bad_step);
    }
    CHECK_THROWS_AS(unlearning::incremental_step(fn, theta, forget, -1.0), Error);
}

TEST_CASE("iau_unlearn on a trained model") {
    auto inst = make_convex_instance(60, 4, 1e-2, 301);
    auto partition = datasets::make_partition(60, 0.1, 302);
    unlearning::UnlearnRequest request;
    request.partition = partition;
    request.eta = unlearning::default_eta(0.5, 60);
    request.mode = unlearning::UnlearnMode::iau;

    SUBCASE("single-update contract: exactly one parameter write, no curvature work") {
        numerics::CounterScope scope;
        auto result = unlearning::iau_unlearn(inst.optimum, inst.data, request);
        CHECK(scope.counters().param_updates == 1);
        CHECK(scope.counters().hvp_calls == 0);
        CHECK(scope.counters().cg_iterations == 0);
        CHECK(result.telemetry.counters.param_updates == 1);
        CHECK(result.telemetry.elapsed_ms >= 0.0);
        CHECK(result.checkpoint.params.allFinite());
    }

    SUBCASE("applying eta once differs from applying eta/2 twice") {
        auto full = unlearning::iau_unlearn(inst.optimum, inst.data, request);
        unlearning::UnlearnRequest half = request;
        half.eta = request.eta / 2.0;
        auto first = unlearning::iau_unlearn(inst.optimum, inst.data, half);
        auto second = unlearning::iau_unlearn(first.checkpoint, inst.data, half);
        CHECK((full.checkpoint.params - second.checkpoint.params).norm() > 0.0);
    }

    SUBCASE("matches the two-phase reference implementation exactly") {
        auto result = unlearning::iau_unlearn(inst.optimum, inst.data, request);
        // Reference: per-sample gradients all at the input theta, then one update.
        models::BatchLoss loss(inst.spec, inst.data);
        auto grads = numerics::per_sample_grads(loss, inst.optimum.params);
        ParamVector sum_remain = ParamVector::Zero(loss.dim());
        ParamVector sum_forget = ParamVector::Zero(loss.dim());
        for (int i : partition.remain_indices) sum_remain += grads[static_cast<std::size_t>(i)];
        for (int i : partition.forget_indices) sum_forget += grads[static_cast<std::size_t>(i)];
        ParamVector reference = inst.optimum.params - request.eta * (sum_remain - sum_forget);
        CHECK((result.checkpoint.params - reference).norm() == 0.0);
    }

    SUBCASE("linearity in eta") {
        auto one = unlearning::iau_unlearn(inst.optimum, inst.data, request);
        unlearning::UnlearnRequest doubled = request;
        doubled.eta = 2.0 * request.eta;
        auto two = unlearning::iau_unlearn(inst.optimum, inst.data, doubled);
        ParamVector d1 = one.checkpoint.params - inst.optimum.params;
        ParamVector d2 = two.checkpoint.params - inst.optimum.params;
        CHECK(rel_diff(d2, ParamVector(2.0 * d1)) <= 1e-14);
    }
}

TEST_CASE("opposite-gradient identity between the influence formulas") {
    // At theta = 0 on a binary model, flipping the label negates the sample
    // gradient exactly, so the add prediction reproduces the remove
    // prediction through one negated solve.
    models::ModelSpec spec;
    spec.kind = models::ModelKind::logistic;
    spec.input_dim = 4;
    spec.classes = 2;
    spec.l2 = 1e-2;
    auto data = datasets::gen_blobs(50, 4, 2, 1.5, 401);
    models::Checkpoint at_zero;
    at_zero.spec = spec;
    at_zero.params = ParamVector::Zero(models::param_count(spec));

    unlearning::InfluenceQuery query;
    query.damping = 1e-3;
    query.cg_tol = 1e-10;

    for (int idx : {0, 7, 13, 21, 34}) {
        datasets::Sample flipped = datasets::sample_at(data, idx);
        flipped.label = 1 - flipped.label;

        ParamVector removed = unlearning::influence_remove(at_zero, data, idx, query);
        ParamVector added = unlearning::influence_add_predict(at_zero, data, flipped, query);
        ParamVector delta_remove = removed - at_zero.params;
        ParamVector delta_add = added - at_zero.params;
        // Same solve with negated right-hand side: exact equality.
        CHECK((delta_add - delta_remove).norm() == 0.0);

        ParamVector added_same = unlearning::influence_add_predict(
            at_zero, data, datasets::sample_at(data, idx), query);
        CHECK(((added_same - at_zero.params) + delta_remove).norm() == 0.0);
    }
}

TEST_CASE("influence_remove at a single-sample optimum predicts no change") {
    // n = 1: the dataset optimum zeroes that sample's gradient.
    auto pair = datasets::gen_blobs(2, 3, 2, 1.0, 411);
    auto one = datasets::subset(pair, std::vector<int>{0}, "/one");
    models::ModelSpec spec;
    spec.kind = models::ModelKind::logistic;
    spec.input_dim = 3;
    spec.classes = 2;
    spec.l2 = 1e-1;
    training::NewtonOptions newton;
    newton.grad_tol = 1e-13;
    models::Checkpoint opt;
    opt.spec = spec;
    opt.params = training::newton_fit(spec, one, models::init_params(spec, 5), newton);

    unlearning::InfluenceQuery query;
    query.damping = 0.0;
    ParamVector predicted = unlearning::influence_remove(opt, one, 0, query);
    CHECK((predicted - opt.params).norm() <= 1e-9);
}

TEST_CASE("influence_remove matches retraining on a duplicated dataset") {
    // Every sample has an exact twin; removing one copy barely moves the
    // optimum and the prediction tracks it tightly.
    auto base = datasets::gen_blobs(30, 4, 2, 1.5, 421);
    std::vector<int> doubled_rows;
    for (int i = 0; i < base.size(); ++i) {
        doubled_rows.push_back(i);
        doubled_rows.push_back(i);
    }
    auto doubled = datasets::subset(base, doubled_rows, "/doubled");

    models::ModelSpec spec;
    spec.kind = models::ModelKind::logistic;
    spec.input_dim = 4;
    spec.classes = 2;
    spec.l2 = 1e-1;
    training::NewtonOptions newton;
    newton.grad_tol = 1e-12;
    models::Checkpoint opt;
    opt.spec = spec;
    opt.params = training::newton_fit(spec, doubled, models::init_params(spec, 1), newton);

    const int victim = 8;
    unlearning::InfluenceQuery query;
    query.damping = 0.0;
    query.cg_tol = 1e-12;
    ParamVector predicted = unlearning::influence_remove(opt, doubled, victim, query);

    std::vector<int> keep(static_cast<std::size_t>(doubled.size() - 1));
    std::iota(keep.begin(), keep.end(), 0);
    for (int& k : keep) {
        if (k >= victim) ++k;
    }
    auto remaining = datasets::subset(doubled, keep, "/minus1");
    ParamVector retrained =
        training::newton_fit(spec, remaining, models::init_params(spec, 2), newton);

    ParamVector delta_pred = predicted - opt.params;
    ParamVector delta_act = retrained - opt.params;
    CHECK(delta_act.norm() > 0.0);
    CHECK(rel_diff(delta_pred, delta_act) <= 0.01);
}

TEST_CASE("influence oracles against Newton retraining on a convex instance") {
    auto inst = make_convex_instance(80, 5, 1e-2, 431);
    training::NewtonOptions newton;
    newton.grad_tol = 1e-12;
    unlearning::InfluenceQuery query;
    query.damping = 0.0;
    query.cg_tol = 1e-12;

    SUBCASE("removal") {
        const int victim = 17;
        ParamVector predicted = unlearning::influence_remove(inst.optimum, inst.data, victim, query);
        std::vector<int> keep;
        for (int i = 0; i < inst.data.size(); ++i) {
            if (i != victim) keep.push_back(i);
        }
        auto remaining = datasets::subset(inst.data, keep, "/minus1");
        ParamVector retrained =
            training::newton_fit(inst.spec, remaining, models::init_params(inst.spec, 3), newton);
        ParamVector dp = predicted - inst.optimum.params;
        ParamVector da = retrained - inst.optimum.params;
        CHECK(cosine(dp, da) >= 0.99);
        CHECK(rel_diff(dp, da) <= 0.05);
    }

    SUBCASE("addition") {
        auto extra = datasets::gen_blobs(81, 5, 2, 1.5, 433);
        datasets::Sample z_plus = datasets::sample_at(extra, 80);
        ParamVector predicted =
            unlearning::influence_add_predict(inst.optimum, inst.data, z_plus, query);
        auto extended = datasets::with_appended(inst.data, z_plus);
        ParamVector retrained =
            training::newton_fit(inst.spec, extended, models::init_params(inst.spec, 4), newton);
        ParamVector dp = predicted - inst.optimum.params;
        ParamVector da = retrained - inst.optimum.params;
        CHECK(cosine(dp, da) >= 0.99);
        CHECK(rel_diff(dp, da) <= 0.05);
    }

    SUBCASE("influence work is visible to the counters while iau does none") {
        numerics::CounterScope scope;
        unlearning::influence_remove(inst.optimum, inst.data, 3, query);
        CHECK(scope.counters().hvp_calls >= 1);
        CHECK(scope.counters().cg_iterations >= 1);
    }
}

TEST_CASE("ERM stationarity links the update variants") {
    auto inst = make_convex_instance(200, 6, 1e-2, 441, 1e-13);
    models::BatchLoss loss(inst.spec, inst.data);
    auto grads = numerics::per_sample_grads(loss, inst.optimum.params);
    ParamVector total = ParamVector::Zero(loss.dim());
    for (const auto& g : grads) total += g;
    CHECK(total.norm() <= 1e-6);  // sum over samples, n·(mean gradient)

    auto partition = datasets::make_partition(200, 0.05, 442);
    const double eta = unlearning::default_eta(0.5, 200);
    unlearning::UnlearnRequest request;
    request.partition = partition;
    request.eta = eta;
    auto result = unlearning::iau_unlearn(inst.optimum, inst.data, request);

    ParamVector step = result.checkpoint.params - inst.optimum.params;
    ParamVector sum_forget = ParamVector::Zero(loss.dim());
    for (int i : partition.forget_indices) sum_forget += grads[static_cast<std::size_t>(i)];
    ParamVector twice_forget = 2.0 * eta * sum_forget;
    CHECK(cosine(step, twice_forget) >= 0.99);
}

TEST_CASE("retrain_oracle") {
    auto ds = datasets::gen_blobs(80, 3, 3, 0.8, 451);
    models::ModelSpec spec;
    spec.kind = models::ModelKind::logistic;
    spec.input_dim = 3;
    spec.classes = 3;
    spec.l2 = 1e-3;
    training::TrainConfig tc;
    tc.lr = 0.3;
    tc.batch_size = 16;
    tc.max_epochs = 20;
    tc.patience = 5;
    tc.val_fraction = 0.2;
    tc.seed = 77;

    SUBCASE("retraining on the full set reproduces training bit-exactly") {
        auto [direct, history] = training::train(spec, ds, tc);
        auto retrain = unlearning::retrain_oracle(spec, ds, tc);
        CHECK(direct.params == retrain.checkpoint.params);
        CHECK(retrain.elapsed_ms > 0.0);
    }

    SUBCASE("newton mode reaches the unique optimum from different inits") {
        unlearning::RetrainOptions opts;
        opts.newton = true;
        opts.newton_opts.grad_tol = 1e-10;
        training::TrainConfig tc_a = tc;
        tc_a.seed = 1;
        training::TrainConfig tc_b = tc;
        tc_b.seed = 2;
        auto a = unlearning::retrain_oracle(spec, ds, tc_a, opts);
        auto b = unlearning::retrain_oracle(spec, ds, tc_b, opts);
        CHECK((a.checkpoint.params - b.checkpoint.params).norm() <= 1e-6);
    }
}
