#include <gtest/gtest.h>

#include "cotsm/meta/cot_task.hpp"
#include "cotsm/models/pretrain.hpp"
#include "cotsm/models/vision_encoder.hpp"

using namespace cotsm;

namespace {

// One template, no synonyms and one verb per (category, object): every scene has exactly
// one correct caption. Small frozen LM pretrained on it, adaptors meta-trained to convergence.
struct ConvergedToy {
    world::Grammar grammar;
    models::Tokenizer tokenizer;
    models::VisionEncoder vision;
    world::CategorySplit split;
    world::Dataset train, test;
    std::optional<models::TinyLM> lm;
    adaptor::AdaptorConfig adaptor;
    std::optional<meta::CotObjective> train_objective, test_objective;
    meta::MetaState state;

    ConvergedToy() {
        Rng root(77);
        world::GrammarConfig gc;
        gc.categories = 10;
        gc.objects = 10;
        gc.verbs = 8;
        gc.templates = 3;
        gc.max_verbs_per_pair = 1;
        gc.synonym_rate = 0.0;
        Rng wr = root.stream("world");
        grammar = world::build_grammar(gc, wr);
        grammar.templates.resize(1);
        tokenizer = models::Tokenizer::from_grammar(grammar);
        const auto codes = models::semantic_codes(tokenizer, grammar, 16, 77);
        Rng vr = root.stream("vision");
        vision = models::VisionEncoder(tokenizer, grammar, codes, {16, 32, 0.05}, vr);
        Rng sr = root.stream("split");
        split = world::make_split(10, 3, sr);
        world::DatasetSpec spec;
        spec.per_category = 8;
        spec.references = 1;
        Rng dr = root.stream("data");
        std::tie(train, test) =
            world::make_dataset(grammar, split, spec, [this](const world::Scene& s) { return vision.encode(s); }, dr);

        models::LmConfig lc;
        lc.vocab = tokenizer.size();
        lc.d_model = 32;
        lc.heads = 2;
        lc.d_ff = 64;
        lc.t_max = 32;
        Rng ir = root.stream("lm-init");
        models::TinyLM fresh(lc, codes, ir);
        const world::Grammar* grammars[] = {&grammar};
        models::CorpusConfig cc;
        cc.scenes_per_pair = 2;
        Rng cr = root.stream("corpus");
        const auto corpus = models::build_lm_corpus(grammars, tokenizer, cc, cr);
        models::PretrainConfig pc;
        pc.epochs = 80;
        Rng pr = root.stream("pretrain");
        lm.emplace(models::lm_pretrain(std::move(fresh), corpus, pc, pr));

        adaptor.feature_dim = 32;
        adaptor.model_dim = 32;
        train_objective.emplace(*lm, tokenizer, adaptor, train);
        test_objective.emplace(*lm, tokenizer, adaptor, test);
        meta::MetaConfig mc;
        mc.batch = 16;
        mc.beta = 0.01;
        Rng mi = root.stream("meta-init");
        state = meta::init_meta_state(train_objective->slots(), mc, mi);
        Rng mt = root.stream("meta-train");
        state = meta::meta_train(std::move(state), *train_objective, train, {}, 500, mt);
    }
};

const ConvergedToy& toy() {
    static const ConvergedToy t;
    return t;
}

}  // namespace

// Queries come from the meta-training categories (the world the adaptors converged on);
// each episode's support set adapts the coefficients first.
TEST(ToyEndToEnd, SupportAdaptedCaptionsMatchTheUniqueReference) {
    const auto& t = toy();
    Rng rng(5);
    std::size_t exact = 0, total = 0;
    for (int e = 0; e < 25; ++e) {
        const auto episode = meta::sample_episode(t.train, {}, rng);
        auto adapted = t.state;
        const auto coefs = meta::inner_adapt(t.state, *t.train_objective, episode.support, t.state.config.alpha, 1);
        for (std::size_t j = 0; j < coefs.size(); ++j) adapted.slots[j].coef = coefs[j];
        std::vector<ad::Var> params;
        for (const auto& w : meta::reconstruct_params(adapted)) params.push_back(ad::Var::constant(w));
        const auto steps = adaptor::assemble_steps(t.adaptor, params);
        for (const auto& q : episode.query) {
            const auto& sample = t.train.at(q.index);
            ASSERT_EQ(sample.references.size(), 1u);
            const auto out = adaptor::cot_generate(steps, *t.lm, adaptor::feature_var(sample.image_feature), t.adaptor);
            exact += t.tokenizer.decode(out.caption) == sample.references.front();
            ++total;
        }
    }
    EXPECT_GE(static_cast<double>(exact) / static_cast<double>(total), 0.8) << exact << " of " << total;
}

TEST(ToyEndToEnd, ZeroingCaptionStepPromptsChangesTheCaption) {
    const auto& t = toy();
    std::vector<ad::Var> params;
    for (const auto& w : meta::reconstruct_params(t.state)) params.push_back(ad::Var::constant(w));
    const auto steps = adaptor::assemble_steps(t.adaptor, params);
    std::size_t changed = 0, total = 0;
    for (const auto& sample : t.test) {
        if (++total > 20) break;
        const auto feature = adaptor::feature_var(sample.image_feature);
        auto chain = adaptor::prompt_chain(steps, feature, t.adaptor);
        const auto normal = adaptor::generate_from_chain(chain, *t.lm, t.adaptor);
        chain.back() = ad::Var::constant(Tensor::zeros(chain.back().rows(), chain.back().cols()));
        const auto zeroed = adaptor::generate_from_chain(chain, *t.lm, t.adaptor);
        EXPECT_EQ(zeroed.sub, normal.sub);  // earlier steps do not see step-3 prompts
        changed += zeroed.caption != normal.caption;
    }
    EXPECT_GT(changed, 0u);
}
