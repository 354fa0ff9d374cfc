#include "cotsm/models/vision_encoder.hpp"

#include <cmath>

#include "cotsm/errors.hpp"
#include "cotsm/numerics/kernels.hpp"
#include "cotsm/numerics/serialize.hpp"

namespace cotsm::models {

Tensor semantic_codes(const Tokenizer& tokenizer, const world::Grammar& grammar, std::size_t code_dim,
                      std::uint64_t seed) {
    if (code_dim == 0) throw ConfigError("code_dim: must be positive");
    const Rng root(seed);
    Tensor codes = Tensor::zeros(tokenizer.size(), code_dim);
    for (std::size_t id = 0; id < tokenizer.size(); ++id) {
        const auto& w = tokenizer.word(id);
        const bool content = !Tokenizer::is_special(id) && grammar.pos.contains(w) &&
                             grammar.pos_of(w) != world::Pos::function;
        Rng r = root.stream("code:" + (content ? grammar.canonical(w) : w));
        for (std::size_t j = 0; j < code_dim; ++j) codes.at(id, j) = r.normal();
    }
    return codes;
}

VisionEncoder::VisionEncoder(const Tokenizer& tokenizer, const world::Grammar& grammar, const Tensor& codes,
                             const VisionConfig& config, Rng& rng)
    : config_(config) {
    if (codes.cols() != config.code_dim) throw DimensionError("vision: code width differs from code_dim");
    if (config.feature_dim == 0) throw ConfigError("vision.feature_dim: must be positive");
    if (config.noise_scale < 0.0) throw ConfigError("vision.noise_scale: must be non-negative");
    auto take = [&](const std::string& w) {
        const auto id = tokenizer.id(w);
        std::vector<double> row(codes.data().begin() + static_cast<long>(id * codes.cols()),
                                codes.data().begin() + static_cast<long>((id + 1) * codes.cols()));
        word_embeddings_.emplace(w, Tensor(Shape{config.code_dim}, std::move(row)));
    };
    for (const auto& s : grammar.subjects) take(s.word);
    for (const auto& o : grammar.objects) take(o);
    for (const auto& v : grammar.verbs) take(v);

    const std::size_t in = 3 * config.code_dim;
    const double std = 1.0 / std::sqrt(static_cast<double>(in));
    projection_ = Tensor::zeros(in, config.feature_dim);
    for (auto& x : projection_.data()) x = std * rng.normal();
}

const Tensor& VisionEncoder::word_embedding(const std::string& word) const {
    const auto it = word_embeddings_.find(word);
    if (it == word_embeddings_.end()) throw LookupError("vision encoder: unknown word '" + word + "'");
    return it->second;
}

Tensor VisionEncoder::encode(const world::Scene& scene) const {
    const std::size_t d = config_.code_dim;
    std::vector<double> z(3 * d);
    const auto& s = word_embedding(scene.subject);
    const auto& o = word_embedding(scene.object);
    const auto& v = word_embedding(scene.verb);
    std::copy(s.data().begin(), s.data().end(), z.begin());
    std::copy(o.data().begin(), o.data().end(), z.begin() + static_cast<long>(d));
    std::copy(v.data().begin(), v.data().end(), z.begin() + static_cast<long>(2 * d));
    std::vector<double> out(config_.feature_dim);
    kernels::gemm(z, projection_.data(), out, 1, 3 * d, config_.feature_dim);
    if (config_.noise_scale > 0.0) {
        Rng noise(scene.noise_seed);
        for (auto& x : out) x += config_.noise_scale * noise.normal();
    }
    Tensor f(Shape{config_.feature_dim}, std::move(out));
    require_finite(f, "encode_image");
    return f;
}

nlohmann::json VisionEncoder::to_json() const {
    nlohmann::json words = nlohmann::json::object();
    for (const auto& [w, e] : word_embeddings_) words[w] = e.values();
    return {{"config",
             {{"code_dim", config_.code_dim}, {"feature_dim", config_.feature_dim}, {"noise_scale", config_.noise_scale}}},
            {"word_embeddings", words},
            {"projection", tensor_to_json(projection_)}};
}

VisionEncoder VisionEncoder::from_json(const nlohmann::json& doc) {
    try {
        VisionEncoder enc;
        const auto& c = doc.at("config");
        enc.config_ = {c.at("code_dim").get<std::size_t>(), c.at("feature_dim").get<std::size_t>(),
                       c.at("noise_scale").get<double>()};
        for (const auto& [w, e] : doc.at("word_embeddings").items()) {
            auto v = e.get<std::vector<double>>();
            if (v.size() != enc.config_.code_dim) throw DataError("vision encoder: embedding width for '" + w + "'");
            const auto n = v.size();
            enc.word_embeddings_.emplace(w, Tensor(Shape{n}, std::move(v)));
        }
        enc.projection_ = tensor_from_json(doc.at("projection"));
        if (enc.projection_.rows() != 3 * enc.config_.code_dim || enc.projection_.cols() != enc.config_.feature_dim)
            throw DataError("vision encoder: projection shape " + enc.projection_.shape_string());
        return enc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed vision encoder: ") + e.what());
    }
}

}  // namespace cotsm::models
