#include "cotsm/models/tiny_lm.hpp"

#include <cmath>

#include "cotsm/errors.hpp"
#include "cotsm/numerics/serialize.hpp"

namespace cotsm::models {

using ad::Var;

void LmConfig::validate() const {
    auto fail = [](const char* field, const std::string& why) { throw ConfigError(std::string("lm.") + field + ": " + why); };
    if (vocab <= Tokenizer::kSpecialCount) fail("vocab", "must exceed the 4 special tokens");
    if (code_dim == 0) fail("code_dim", "must be positive");
    if (d_model == 0) fail("d_model", "must be positive");
    if (layers == 0) fail("layers", "must be positive");
    if (heads == 0 || d_model % heads != 0) fail("heads", "must divide d_model");
    if (d_ff == 0) fail("d_ff", "must be positive");
    if (t_max < 2) fail("t_max", "must be at least 2");
    if (!(init_std > 0.0)) fail("init_std", "must be positive");
}

namespace {

Tensor gaussian(std::size_t rows, std::size_t cols, double std, Rng& rng) {
    Tensor t = Tensor::zeros(rows, cols);
    for (auto& x : t.data()) x = std * rng.normal();
    return t;
}

// -1e9 strictly above the diagonal, 0 elsewhere.
const Tensor& causal_mask(std::size_t n) {
    thread_local std::vector<Tensor> cache;
    if (cache.size() <= n) cache.resize(n + 1);
    auto& m = cache[n];
    if (m.empty()) {
        m = Tensor::zeros(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = -1e9;
    }
    return m;
}

}  // namespace

TinyLM::TinyLM(const LmConfig& config, Tensor codes, Rng& rng) : config_(config), codes_(std::move(codes)) {
    config_.validate();
    if (codes_.rows() != config_.vocab || codes_.cols() != config_.code_dim)
        throw DimensionError("lm: codes " + codes_.shape_string() + " do not match vocab x code_dim");
    const auto d = config_.d_model, ff = config_.d_ff;
    const double s = config_.init_std;
    // Codes have unit-variance entries; scale the projection so embeddings start at init_std.
    params_.push_back({"embed_proj", gaussian(config_.code_dim, d, s / std::sqrt(double(config_.code_dim)), rng)});
    params_.push_back({"pos", gaussian(config_.t_max, d, s, rng)});
    params_.push_back({"head_w", gaussian(d, config_.vocab, s, rng)});
    params_.push_back({"head_b", Tensor::zeros(1, config_.vocab)});
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const auto p = "block" + std::to_string(l) + ".";
        // Residual-branch outputs scaled down with depth, as in GPT-2.
        const double out_std = s / std::sqrt(2.0 * double(config_.layers));
        params_.push_back({p + "wq", gaussian(d, d, s, rng)});
        params_.push_back({p + "wk", gaussian(d, d, s, rng)});
        params_.push_back({p + "wv", gaussian(d, d, s, rng)});
        params_.push_back({p + "wo", gaussian(d, d, out_std, rng)});
        params_.push_back({p + "w1", gaussian(d, ff, s, rng)});
        params_.push_back({p + "b1", Tensor::zeros(1, ff)});
        params_.push_back({p + "w2", gaussian(ff, d, out_std, rng)});
        params_.push_back({p + "b2", Tensor::zeros(1, d)});
    }
    rebuild_vars();
}

void TinyLM::rebuild_vars() {
    vars_.clear();
    for (const auto& p : params_) vars_.push_back(frozen_ ? Var::constant(p.value) : Var::parameter(p.value));
    codes_var_ = Var::constant(codes_);
}

void TinyLM::freeze() {
    frozen_ = true;
    rebuild_vars();
}

void TinyLM::unfreeze() {
    frozen_ = false;
    rebuild_vars();
}

std::vector<NamedTensor> TinyLM::parameters() const { return params_; }

void TinyLM::set_parameters(const std::vector<NamedTensor>& params) {
    if (params.size() != params_.size()) throw DimensionError("lm: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != params_[i].name || !params[i].value.same_shape(params_[i].value))
            throw DimensionError("lm: parameter '" + params[i].name + "' does not match '" + params_[i].name + "'");
        require_finite(params[i].value, "lm parameters");
    }
    params_ = params;
    rebuild_vars();
}

Var TinyLM::embed(std::span<const std::size_t> tokens) const {
    for (auto t : tokens)
        if (t >= config_.vocab) throw IndexError("lm: token id " + std::to_string(t) + " outside vocabulary");
    return ad::matmul(ad::gather_rows(codes_var_, tokens), var(kEmbedProj));
}

Var TinyLM::attention(const Var& x, std::size_t block) const {
    const std::size_t base = kFirstBlock + block * kPerBlock;
    const std::size_t n = x.rows(), d = config_.d_model, h = config_.heads, dh = d / h;
    const Var q = ad::matmul(x, var(base + 0));
    const Var k = ad::matmul(x, var(base + 1));
    const Var v = ad::matmul(x, var(base + 2));
    const Var mask = Var::constant(causal_mask(n));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    heads.reserve(h);
    for (std::size_t i = 0; i < h; ++i) {
        const Var qi = ad::slice_cols(q, i * dh, (i + 1) * dh);
        const Var ki = ad::slice_cols(k, i * dh, (i + 1) * dh);
        const Var vi = ad::slice_cols(v, i * dh, (i + 1) * dh);
        const Var scores = ad::add(ad::scale(ad::matmul(qi, ad::transpose(ki)), scale), mask);
        heads.push_back(ad::matmul(ad::softmax_rows(scores), vi));
    }
    const Var merged = h == 1 ? heads.front() : ad::concat_cols(heads);
    return ad::matmul(merged, var(base + 3));
}

Var TinyLM::feed_forward(const Var& x, std::size_t block) const {
    const std::size_t base = kFirstBlock + block * kPerBlock;
    const Var hidden = ad::tanh(ad::add_row(ad::matmul(x, var(base + 4)), var(base + 5)));
    return ad::add_row(ad::matmul(hidden, var(base + 6)), var(base + 7));
}

Var TinyLM::forward(std::span<const Var> prompts, std::span<const std::size_t> tokens, std::size_t first_logit) const {
    if (tokens.empty()) throw ContractError("lm_forward: at least one token required");
    if (first_logit >= tokens.size()) throw ContractError("lm_forward: first_logit past the last token");
    std::size_t prompt_rows = 0;
    for (const auto& p : prompts) {
        if (p.cols() != config_.d_model)
            throw DimensionError("lm_forward: prompt width " + std::to_string(p.cols()) + " != d_model " +
                                 std::to_string(config_.d_model));
        prompt_rows += p.rows();
    }
    const std::size_t n = prompt_rows + tokens.size();
    if (n > config_.t_max)
        throw CapacityError("lm_forward: sequence of " + std::to_string(n) + " positions exceeds t_max " +
                            std::to_string(config_.t_max));

    std::vector<Var> parts(prompts.begin(), prompts.end());
    parts.push_back(embed(tokens));
    Var x = parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
    x = ad::add(x, ad::slice_rows(var(kPos), 0, n));
    for (std::size_t b = 0; b < config_.layers; ++b) {
        x = ad::add(x, attention(ad::layer_norm(x), b));
        x = ad::add(x, feed_forward(ad::layer_norm(x), b));
    }
    // Only token positions produce logits.
    const std::size_t first = prompt_rows + first_logit;
    const Var out = ad::layer_norm(first == 0 ? x : ad::slice_rows(x, first, n));
    return ad::add_row(ad::matmul(out, var(kHeadW)), var(kHeadB));
}

nlohmann::json TinyLM::to_json() const {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : params_) params.push_back({{"name", p.name}, {"value", tensor_to_json(p.value)}});
    return {{"config",
             {{"vocab", config_.vocab},
              {"code_dim", config_.code_dim},
              {"d_model", config_.d_model},
              {"layers", config_.layers},
              {"heads", config_.heads},
              {"d_ff", config_.d_ff},
              {"t_max", config_.t_max},
              {"init_std", config_.init_std}}},
            {"frozen", frozen_},
            {"codes", tensor_to_json(codes_)},
            {"parameters", params}};
}

TinyLM TinyLM::from_json(const nlohmann::json& doc) {
    try {
        const auto& c = doc.at("config");
        LmConfig config;
        config.vocab = c.at("vocab").get<std::size_t>();
        config.code_dim = c.at("code_dim").get<std::size_t>();
        config.d_model = c.at("d_model").get<std::size_t>();
        config.layers = c.at("layers").get<std::size_t>();
        config.heads = c.at("heads").get<std::size_t>();
        config.d_ff = c.at("d_ff").get<std::size_t>();
        config.t_max = c.at("t_max").get<std::size_t>();
        config.init_std = c.at("init_std").get<double>();
        Rng scratch(0);
        TinyLM lm(config, tensor_from_json(doc.at("codes")), scratch);
        std::vector<NamedTensor> params;
        for (const auto& p : doc.at("parameters"))
            params.push_back({p.at("name").get<std::string>(), tensor_from_json(p.at("value"))});
        lm.set_parameters(params);
        if (doc.at("frozen").get<bool>()) lm.freeze();
        return lm;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed lm checkpoint: ") + e.what());
    }
}

TokenIds greedy_decode(const TinyLM& lm, std::span<const Var> prompts, std::span<const std::size_t> prefix,
                       std::size_t max_len) {
    ad::NoGradGuard no_grad;
    std::size_t prompt_rows = 0;
    for (const auto& p : prompts) prompt_rows += p.rows();
    const std::size_t used = prompt_rows + prefix.size();
    const std::size_t room = lm.config().t_max > used ? lm.config().t_max - used : 0;
    // The last decoded token never needs to be fed back, hence the +1.
    max_len = std::min(max_len, room + 1);

    TokenIds context(prefix.begin(), prefix.end());
    TokenIds out;
    for (std::size_t step = 0; step < max_len; ++step) {
        const Var logits = lm.forward(prompts, context, context.size() - 1);
        const auto& v = logits.value();
        const std::size_t last = 0, V = v.cols();
        std::size_t best = 0;
        for (std::size_t j = 1; j < V; ++j)
            if (v.at(last, j) > v.at(last, best)) best = j;
        if (best == Tokenizer::kEos) break;
        out.push_back(best);
        context.push_back(best);
    }
    return out;
}

}  // namespace cotsm::models
