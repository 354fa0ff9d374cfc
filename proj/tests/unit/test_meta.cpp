#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "../support/gradcheck.hpp"
#include "../support/maml_oracles.hpp"
#include "../support/probe_objectives.hpp"
#include "cotsm/errors.hpp"
#include "cotsm/meta/cot_task.hpp"
#include "cotsm/models/vision_encoder.hpp"
#include "cotsm/numerics/kernels.hpp"

using namespace cotsm;
using namespace cotsm::meta;
using ad::Var;

namespace {

// A small captioning world: default grammar, 8-wide features, 8-wide frozen LM.
struct ToyWorld {
    world::Grammar grammar;
    models::Tokenizer tokenizer;
    Tensor codes;
    models::VisionEncoder vision;
    world::CategorySplit split;
    world::Dataset train, test;
    std::optional<models::TinyLM> lm;
    adaptor::AdaptorConfig adaptor;
    std::optional<CotObjective> train_objective, test_objective;

    ToyWorld() {
        Rng root(21);
        Rng wr = root.stream("world");
        grammar = world::build_grammar({}, wr);
        tokenizer = models::Tokenizer::from_grammar(grammar);
        codes = models::semantic_codes(tokenizer, grammar, 16, 21);
        Rng vr = root.stream("vision");
        vision = models::VisionEncoder(tokenizer, grammar, codes, {16, 8, 0.05}, vr);
        Rng sr = root.stream("split");
        split = world::make_split(20, 5, sr);
        Rng dr = root.stream("data");
        world::DatasetSpec spec;
        spec.per_category = 6;
        std::tie(train, test) =
            world::make_dataset(grammar, split, spec, [this](const world::Scene& s) { return vision.encode(s); }, dr);
        models::LmConfig lc;
        lc.vocab = tokenizer.size();
        lc.d_model = 8;
        lc.heads = 2;
        lc.d_ff = 12;
        lc.t_max = 32;
        lc.init_std = 0.3;
        Rng lr = root.stream("lm");
        lm.emplace(lc, codes, lr);
        lm->freeze();
        adaptor.feature_dim = 8;
        adaptor.model_dim = 8;
        train_objective.emplace(*lm, tokenizer, adaptor, train);
        test_objective.emplace(*lm, tokenizer, adaptor, test);
    }
};

const ToyWorld& toy() {
    static const ToyWorld w;
    return w;
}

MetaState single_slot_state(Tensor basis, Tensor coef, MetaConfig config = {}) {
    MetaState s;
    s.config = config;
    SlotState slot;
    slot.slot = {0, "w", basis.rows(), coef.cols()};
    slot.basis_opt = AdamWState::for_param(basis, config.adamw);
    slot.basis = std::move(basis);
    slot.coef_opt = AdamWState::for_param(coef, config.adamw);
    slot.coef = std::move(coef);
    s.slots.push_back(std::move(slot));
    return s;
}

world::Dataset labelled(int categories, int per_category) {
    world::Dataset d;
    for (int c = 0; c < categories; ++c)
        for (int i = 0; i < per_category; ++i) {
            world::CaptionedSample s;
            s.id = d.size();
            s.category_id = c;
            s.references = {{"a"}, {"b"}, {"c"}};
            d.push_back(std::move(s));
        }
    return d;
}

std::string dump(const MetaState& s) { return to_json(s).dump(); }

}  // namespace

TEST(Reconstruct, HandExamples) {
    EXPECT_EQ(reconstruct_params(single_slot_state(Tensor::identity(2), Tensor(2, 1, {3.0, 4.0})))[0],
              Tensor(2, 1, {3.0, 4.0}));
    EXPECT_EQ(reconstruct_params(single_slot_state(Tensor::zeros(3, 2), Tensor(2, 2, {1.0, -2.0, 5.0, 7.0})))[0],
              Tensor::zeros(3, 2));
    EXPECT_EQ(reconstruct_params(single_slot_state(Tensor(2, 2, {1.0, 0.0, 0.0, 2.0}), Tensor(2, 2, {1.0, 1.0, 1.0, 0.0})))[0],
              Tensor(2, 2, {1.0, 1.0, 2.0, 0.0}));
}

TEST(Reconstruct, ShapeMismatchIsDimensionError) {
    auto s = single_slot_state(Tensor::identity(3), Tensor::zeros(3, 1));
    s.slots[0].slot.cols = 2;
    EXPECT_THROW(reconstruct_params(s), DimensionError);
    EXPECT_THROW(reconstruct_params(single_slot_state(Tensor::identity(3), Tensor::zeros(2, 1))), DimensionError);
}

TEST(Reconstruct, GradientMatchesFiniteDifferences) {
    Rng rng(2);
    for (int probe = 0; probe < 20; ++probe) {
        const std::size_t rows = 2 + rng.below(5), d = 1 + rng.below(rows), cols = 1 + rng.below(4);
        Tensor weights = oracle::random_tensor(rows, cols, rng);
        const double err = oracle::gradcheck(
            [&](const std::vector<Var>& v) {
                return ad::sum(ad::mul(reconstruct_slot(v[0], v[1]), Var::constant(weights)));
            },
            {oracle::random_tensor(rows, d, rng), oracle::random_tensor(d, cols, rng)});
        EXPECT_LT(err, oracle::kGradTolerance) << "probe " << probe;
    }
}

TEST(MetaInit, SubspaceShapesAndOrthonormalBases) {
    Rng rng(3);
    const std::vector<ParamSlot> slots{{0, "a", 64, 64}, {0, "b", 1, 64}, {1, "c", 8, 3}};
    const auto s = init_meta_state(slots, {}, rng);
    ASSERT_EQ(s.slots.size(), 3u);
    EXPECT_EQ(s.slots[0].basis->cols(), 16u);
    EXPECT_EQ(s.slots[1].basis->cols(), 1u);  // capped at the slot's row count
    EXPECT_EQ(s.slots[2].basis->cols(), 4u);
    for (const auto& slot : s.slots) {
        const auto& b = *slot.basis;
        for (std::size_t p = 0; p < b.cols(); ++p)
            for (std::size_t q = 0; q < b.cols(); ++q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < b.rows(); ++i) dot += b.at(i, p) * b.at(i, q);
                EXPECT_NEAR(dot, p == q ? 1.0 : 0.0, 1e-12);
            }
    }
    MetaConfig direct;
    direct.subspace = false;
    const auto d = init_meta_state(slots, direct, rng);
    EXPECT_FALSE(d.slots[0].basis.has_value());
    EXPECT_EQ(d.slots[0].coef.shape(), (Shape{64, 64}));
}

TEST(MetaInit, ReconstructedWeightsHaveXavierSpread) {
    Rng rng(4);
    const auto s = init_meta_state({{0, "a", 64, 64}}, {}, rng);
    const auto w = reconstruct_params(s)[0];
    double var = 0.0;
    for (double x : w.data()) var += x * x;
    var /= double(w.size());
    const double xavier = 6.0 / 128.0 / 3.0;  // variance of U(-b, b) with b^2 = 6 / (rows + cols)
    EXPECT_NEAR(var, xavier, 0.15 * xavier);
}

TEST(Episodes, CountsAndPerCategoryComposition) {
    const auto data = labelled(6, 12);
    Rng rng(5);
    for (const auto& [n, k, l] : {std::tuple{2u, 1u, 1u}, std::tuple{5u, 5u, 5u}}) {
        const auto ep = sample_episode(data, {n, k, l}, rng);
        EXPECT_EQ(ep.support.size(), n * k);
        EXPECT_EQ(ep.query.size(), n * l);
        EXPECT_EQ(std::set<int>(ep.categories.begin(), ep.categories.end()).size(), n);
        for (int c : ep.categories) {
            std::size_t s = 0, q = 0;
            for (const auto& r : ep.support) s += data[r.index].category_id == c;
            for (const auto& r : ep.query) q += data[r.index].category_id == c;
            EXPECT_EQ(s, k);
            EXPECT_EQ(q, l);
        }
    }
}

TEST(Episodes, SupportAndQueryNeverOverlap) {
    const auto data = labelled(5, 4);
    Rng rng(6);
    for (int draw = 0; draw < 1000; ++draw) {
        const auto ep = sample_episode(data, {2, 1, 1}, rng);
        std::set<std::size_t> support;
        for (const auto& r : ep.support) support.insert(r.index);
        for (const auto& r : ep.query) EXPECT_FALSE(support.contains(r.index));
        for (const auto& r : ep.support) EXPECT_LT(r.reference, 3u);
    }
}

TEST(Episodes, InsufficientDataIsDataError) {
    Rng rng(7);
    EXPECT_THROW(sample_episode(labelled(1, 10), {2, 1, 1}, rng), DataError);
    EXPECT_THROW(sample_episode(labelled(3, 2), {2, 2, 1}, rng), DataError);
    EXPECT_THROW(sample_episode(labelled(3, 2), {0, 1, 1}, rng), ConfigError);
}

TEST(InnerAdapt, QuadraticProbeStep) {
    const oracle::QuadraticObjective obj({{1.0, 2.0}});
    const auto s = single_slot_state(Tensor::identity(2), Tensor::zeros(2, 1));
    const std::vector<SampleRef> support{{0, 0}};
    const auto c = inner_adapt(s, obj, support, 0.1, 1);
    EXPECT_NEAR(c[0][0], 0.1, 1e-15);
    EXPECT_NEAR(c[0][1], 0.2, 1e-15);
    EXPECT_EQ(MetaConfig{}.alpha, 0.01);
}

TEST(InnerAdapt, ZeroGradientKeepsCoefficients) {
    const oracle::QuadraticObjective obj({{0.5, -1.5}});
    const auto s = single_slot_state(Tensor::identity(2), Tensor(2, 1, {0.5, -1.5}));
    const std::vector<SampleRef> support{{0, 0}};
    EXPECT_EQ(inner_adapt(s, obj, support, 0.01, 3)[0], s.slots[0].coef);
}

TEST(InnerAdapt, RejectsNonPositiveAlphaAndLeavesStateUntouched) {
    const oracle::QuadraticObjective obj({{1.0, 2.0}});
    Rng rng(8);
    auto s = init_meta_state(obj.slots(), {}, rng);
    const std::vector<SampleRef> support{{0, 0}};
    EXPECT_THROW(inner_adapt(s, obj, support, 0.0, 1), ConfigError);
    EXPECT_THROW(inner_adapt(s, obj, support, -0.1, 1), ConfigError);
    const auto before = dump(s);
    const auto adapted = inner_adapt(s, obj, support, 0.5, 2);
    EXPECT_EQ(dump(s), before);
    EXPECT_NE(adapted[0], s.slots[0].coef);
}

TEST(InnerAdapt, CaptioningStateIsUntouched) {
    const auto& w = toy();
    Rng rng(9);
    const auto s = init_meta_state(w.train_objective->slots(), {}, rng);
    const auto before = dump(s);
    const auto ep = sample_episode(w.train, {2, 1, 1}, rng);
    const auto adapted = inner_adapt(s, *w.train_objective, ep.support, 0.01, 1);
    EXPECT_EQ(dump(s), before);
    ASSERT_EQ(adapted.size(), s.slots.size());
    bool moved = false;
    for (std::size_t j = 0; j < adapted.size(); ++j) moved = moved || adapted[j] != s.slots[j].coef;
    EXPECT_TRUE(moved);
}

TEST(OuterStep, ZeroGradientsOnlyAdvanceCounters) {
    const oracle::QuadraticObjective obj({{0.3}, {0.3}});
    MetaConfig config;
    config.adamw.weight_decay = 0.0;
    config.full_subspace = true;
    auto s = single_slot_state(Tensor::identity(1), Tensor(1, 1, {0.3}), config);
    const Episode ep{{0, 1}, {{0, 0}}, {{1, 0}}};
    const auto next = outer_step(s, obj, std::span<const Episode>(&ep, 1));
    EXPECT_EQ(next.slots[0].coef, s.slots[0].coef);
    EXPECT_EQ(*next.slots[0].basis, *s.slots[0].basis);
    EXPECT_EQ(next.slots[0].coef_opt.step_count, 1u);
    EXPECT_EQ(next.iteration, 1u);
    config.outer = OuterOptimizer::sgd;
    s.config = config;
    EXPECT_EQ(outer_step(s, obj, std::span<const Episode>(&ep, 1)).slots[0].coef, s.slots[0].coef);
    EXPECT_THROW(outer_step(s, obj, std::span<const Episode>()), ContractError);
}

TEST(OuterStep, ReconstructionIdentityHoldsAfterUpdates) {
    const auto& w = toy();
    Rng rng(10);
    MetaConfig config;
    config.batch = 2;
    auto s = init_meta_state(w.train_objective->slots(), config, rng);
    s = meta_train(s, *w.train_objective, w.train, {}, 2, rng);
    const auto params = reconstruct_params(s);
    for (std::size_t j = 0; j < s.slots.size(); ++j) {
        const auto& b = *s.slots[j].basis;
        const auto& c = s.slots[j].coef;
        std::vector<double> out(b.rows() * c.cols());
        kernels::reference::gemm(b.data(), c.data(), out, b.rows(), b.cols(), c.cols());
        EXPECT_EQ(params[j], Tensor(b.rows(), c.cols(), out)) << s.slots[j].slot.name;
    }
}

TEST(OuterStep, SumModeScalesTheSgdStep) {
    const oracle::QuadraticObjective obj({{1.0, 0.0}, {0.0, 1.0}, {2.0, 2.0}});
    MetaConfig config;
    config.outer = OuterOptimizer::sgd;
    config.full_subspace = true;
    config.update_bases = false;
    config.beta = 0.1;
    const auto s = single_slot_state(Tensor::identity(2), Tensor::zeros(2, 1), config);
    const std::vector<Episode> eps{{{0}, {{0, 0}}, {{1, 0}}}, {{0}, {{1, 0}}, {{2, 0}}}};
    const auto mean = outer_step(s, obj, eps);
    auto summed_state = s;
    summed_state.config.sum_episodes = true;
    const auto summed = outer_step(summed_state, obj, eps);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(summed.slots[0].coef[i], 2.0 * mean.slots[0].coef[i], 1e-15);
}

// Plain first-order MAML on the slot weights themselves, written without subspaces.
TEST(OuterStep, ReducesToFirstOrderMamlWithIdentityBases) {
    const auto& w = toy();
    const auto& obj = *w.train_objective;
    MetaConfig config;
    config.full_subspace = true;
    config.basis_init = BasisInit::identity;
    config.update_bases = false;
    config.outer = OuterOptimizer::sgd;
    config.alpha = 0.05;
    config.beta = 0.1;
    config.batch = 3;
    Rng rng(11);
    auto state = init_meta_state(obj.slots(), config, rng);
    std::vector<Tensor> weights;
    for (const auto& s : state.slots) weights.push_back(s.coef);

    Rng episodes_rng(12);
    for (int it = 0; it < 5; ++it) {
        std::vector<Episode> batch;
        for (std::size_t b = 0; b < config.batch; ++b) batch.push_back(sample_episode(w.train, {}, episodes_rng));
        state = outer_step(state, obj, batch);

        oracle::first_order_maml_step(weights, obj, batch, config.alpha, config.beta);

        for (std::size_t j = 0; j < weights.size(); ++j)
            for (std::size_t i = 0; i < weights[j].size(); ++i)
                ASSERT_NEAR(state.slots[j].coef[i], weights[j][i], 1e-10) << "iteration " << it << " slot " << j;
    }
}

TEST(SecondOrder, MetaGradientMatchesFiniteDifferences) {
    Rng rng(13);
    for (int probe = 0; probe < 20; ++probe) {
        const double amp = rng.uniform(0.5, 2.0), phase = rng.uniform(0.0, 3.0);
        std::vector<oracle::SineProbeObjective::Point> pts;
        for (int i = 0; i < 6; ++i) {
            const double x = rng.uniform(-3.0, 3.0);
            pts.push_back({x, amp * std::sin(x + phase)});
        }
        const oracle::SineProbeObjective obj(pts);
        MetaConfig config;
        config.second_order = true;
        config.alpha = 0.3;
        auto state = init_meta_state(obj.slots(), config, rng);
        const Episode ep{{0}, {{0, 0}, {1, 0}, {2, 0}}, {{3, 0}, {4, 0}, {5, 0}}};
        const auto exact = episode_meta_gradient(state, obj, ep);

        const auto& slot = state.slots[0];
        const double h = 1e-5;
        Tensor fd_c = Tensor::zeros(slot.coef.shape()), fd_s = Tensor::zeros(slot.basis->shape());
        for (std::size_t i = 0; i < fd_c.size(); ++i) {
            Tensor up = slot.coef, down = slot.coef;
            up[i] += h;
            down[i] -= h;
            fd_c[i] = (oracle::sine_meta_loss(obj, *slot.basis, up, ep, config.alpha) -
                       oracle::sine_meta_loss(obj, *slot.basis, down, ep, config.alpha)) / (2.0 * h);
        }
        for (std::size_t i = 0; i < fd_s.size(); ++i) {
            Tensor up = *slot.basis, down = *slot.basis;
            up[i] += h;
            down[i] -= h;
            fd_s[i] = (oracle::sine_meta_loss(obj, up, slot.coef, ep, config.alpha) -
                       oracle::sine_meta_loss(obj, down, slot.coef, ep, config.alpha)) / (2.0 * h);
        }
        EXPECT_LT(oracle::relative_error(exact.coef_grads[0], fd_c), 1e-3) << "probe " << probe;
        EXPECT_LT(oracle::relative_error(exact.basis_grads[0], fd_s), 1e-3) << "probe " << probe;
        EXPECT_NEAR(exact.query_loss, oracle::sine_meta_loss(obj, *slot.basis, slot.coef, ep, config.alpha), 1e-12);

        // The first-order approximation drops the curvature term and misses the oracle.
        state.config.second_order = false;
        const auto first = episode_meta_gradient(state, obj, ep);
        EXPECT_GT(oracle::relative_error(first.coef_grads[0], fd_c), 1e-3) << "probe " << probe;
    }
}

TEST(OuterStep, WorkerCountDoesNotChangeTheUpdate) {
    const auto& w = toy();
    MetaConfig config;
    config.batch = 6;
    Rng init(14);
    const auto s = init_meta_state(w.train_objective->slots(), config, init);
    auto run = [&](std::size_t workers) {
        auto local = s;
        local.config.workers = workers;
        Rng rng(15);
        local = meta_train(local, *w.train_objective, w.train, {}, 2, rng);
        return dump(local);
    };
    EXPECT_EQ(run(1), run(3));
}

TEST(MetaTrain, ZeroIterationsAndRoundTrip) {
    const auto& w = toy();
    MetaConfig config;
    config.batch = 2;
    Rng rng(16);
    const auto s = init_meta_state(w.train_objective->slots(), config, rng);
    Rng train_rng(17);
    EXPECT_EQ(dump(meta_train(s, *w.train_objective, w.train, {}, 0, train_rng)), dump(s));
    const auto trained = meta_train(s, *w.train_objective, w.train, {}, 1, train_rng);
    const auto back = meta_state_from_json(nlohmann::json::parse(dump(trained)));
    EXPECT_EQ(dump(back), dump(trained));
    EXPECT_EQ(reconstruct_params(back), reconstruct_params(trained));
}

TEST(MetaTrain, NonFiniteLossIsNumericError) {
    const double inf = std::numeric_limits<double>::infinity();
    const oracle::QuadraticObjective obj({{inf}, {inf}, {inf}, {inf}});
    MetaConfig config;
    config.batch = 1;
    config.full_subspace = true;
    Rng rng(18);
    const auto s = init_meta_state(obj.slots(), config, rng);
    EXPECT_THROW(meta_train(s, obj, labelled(2, 1), {2, 0, 1}, 1, rng), ConfigError);
    world::Dataset d = labelled(2, 2);
    EXPECT_THROW(meta_train(s, obj, d, {1, 1, 1}, 3, rng), NumericError);
}

TEST(MetaConfigJson, FieldLevelErrors) {
    MetaConfig c;
    c.alpha = 0.05;
    c.outer = OuterOptimizer::sgd;
    const auto back = meta_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(meta_config_from_json({{"alpha", "fast"}}), ConfigError);
    EXPECT_THROW(meta_config_from_json({{"beta", 0.0}}), ConfigError);
    EXPECT_THROW(meta_config_from_json({{"outer_optimizer", "lion"}}), ConfigError);
    try {
        meta_config_from_json({{"inner_steps", 0}});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("meta.inner_steps"), std::string::npos);
    }
}

TEST(MetaTest, RefusesTrainCategories) {
    const auto& w = toy();
    Rng rng(19);
    const auto s = init_meta_state(w.train_objective->slots(), {}, rng);
    EXPECT_THROW(meta_test(s, *w.train_objective, w.split.meta_train, {}, rng), DataError);
}

TEST(MetaTest, CaptionCountsAndPurity) {
    const auto& w = toy();
    Rng rng(20);
    const auto s = init_meta_state(w.train_objective->slots(), {}, rng);
    const auto before = dump(s);
    MetaTestConfig tc;
    tc.episodes = 3;
    tc.shape = {2, 1, 2};
    Rng eval(21);
    const auto out = meta_test(s, *w.test_objective, w.split.meta_train, tc, eval);
    EXPECT_EQ(out.size(), 3u * 2u * 2u);
    EXPECT_EQ(dump(s), before);
    for (const auto& g : out) EXPECT_LT(g.sample, w.test.size());
}

TEST(MetaTest, ZeroAlphaGeneratesFromTheMetaInitialization) {
    const auto& w = toy();
    Rng rng(22);
    const auto s = init_meta_state(w.train_objective->slots(), {}, rng);
    MetaTestConfig tc;
    tc.episodes = 2;
    tc.alpha = 0.0;
    Rng eval(23);
    const auto out = meta_test(s, *w.test_objective, w.split.meta_train, tc, eval);
    std::vector<Var> vars;
    for (const auto& t : reconstruct_params(s)) vars.push_back(Var::constant(t));
    const auto steps = adaptor::assemble_steps(w.adaptor, vars);
    for (const auto& g : out)
        EXPECT_EQ(g.output, adaptor::cot_generate(steps, *w.lm, w.test_objective->feature(g.sample), w.adaptor));
}

TEST(Baseline, DeterministicAndZeroIterationsIsInit) {
    const auto& w = toy();
    BaselineConfig bc;
    bc.batch = 4;
    auto run = [&](std::size_t iterations) {
        Rng rng(24);
        return dump(baseline_train(*w.train_objective, iterations, bc, rng));
    };
    EXPECT_EQ(run(2), run(2));
    Rng rng(24);
    Rng init = rng.stream("init");
    MetaConfig direct;
    direct.subspace = false;
    EXPECT_EQ(run(0), dump(init_meta_state(w.train_objective->slots(), direct, init)));
    EXPECT_NE(run(0), run(1));
}
