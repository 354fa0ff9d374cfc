#include "cotsm/meta/engine.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <omp.h>

#include "cotsm/errors.hpp"
#include "cotsm/numerics/serialize.hpp"

namespace cotsm::meta {

using ad::Var;

Episode sample_episode(const world::Dataset& data, const EpisodeShape& shape, Rng& rng) {
    if (shape.n_way == 0 || shape.k_shot == 0 || shape.l_query == 0)
        throw ConfigError("episode: n_way, k_shot and l_query must be positive");
    std::map<int, std::vector<std::size_t>> by_category;
    for (std::size_t i = 0; i < data.size(); ++i) by_category[data[i].category_id].push_back(i);
    std::vector<int> categories;
    for (const auto& [c, _] : by_category) categories.push_back(c);
    if (categories.size() < shape.n_way)
        throw DataError("episode: " + std::to_string(shape.n_way) + "-way episode from " +
                        std::to_string(categories.size()) + " categories");
    rng.shuffle(std::span<int>(categories));
    categories.resize(shape.n_way);

    Episode ep;
    ep.categories = categories;
    const std::size_t need = shape.k_shot + shape.l_query;
    for (int c : categories) {
        auto pool = by_category[c];
        if (pool.size() < need)
            throw DataError("episode: category " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                            " samples, needs " + std::to_string(need));
        // Partial Fisher-Yates: the first `need` slots become a uniform draw without replacement.
        for (std::size_t i = 0; i < need; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
        for (std::size_t i = 0; i < need; ++i) {
            const SampleRef ref{pool[i], rng.below(data[pool[i]].references.size())};
            (i < shape.k_shot ? ep.support : ep.query).push_back(ref);
        }
    }
    return ep;
}

void MetaConfig::validate() const {
    auto fail = [](const char* field, const std::string& why) { throw ConfigError(std::string("meta.") + field + ": " + why); };
    if (!(alpha > 0.0)) fail("alpha", "must be positive");
    if (!(beta > 0.0)) fail("beta", "must be positive");
    if (inner_steps == 0) fail("inner_steps", "must be at least 1");
    if (batch == 0) fail("batch", "must be at least 1");
    if (workers == 0) fail("workers", "must be at least 1");
    if (basis_init == BasisInit::identity && subspace && !full_subspace)
        fail("basis_init", "identity bases need full_subspace");
}

std::size_t MetaConfig::dim_for(std::size_t rows) const {
    if (full_subspace) return rows;
    const std::size_t d = subspace_dim > 0 ? subspace_dim : std::max<std::size_t>(4, rows / 4);
    return std::min(d, rows);
}

namespace {

// Orthonormal columns by modified Gram-Schmidt on a seeded Gaussian matrix.
Tensor orthonormal_basis(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor q = Tensor::zeros(rows, cols);
    for (auto& x : q.data()) x = rng.normal();
    for (std::size_t j = 0; j < cols; ++j) {
        for (std::size_t p = 0; p < j; ++p) {
            double dot = 0.0;
            for (std::size_t i = 0; i < rows; ++i) dot += q.at(i, p) * q.at(i, j);
            for (std::size_t i = 0; i < rows; ++i) q.at(i, j) -= dot * q.at(i, p);
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < rows; ++i) norm += q.at(i, j) * q.at(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw NumericError("orthonormal basis: degenerate Gaussian draw");
        for (std::size_t i = 0; i < rows; ++i) q.at(i, j) /= norm;
    }
    return q;
}

}  // namespace

MetaState init_meta_state(const std::vector<ParamSlot>& slots, const MetaConfig& config, Rng& rng) {
    config.validate();
    MetaState state;
    state.config = config;
    for (const auto& slot : slots) {
        SlotState s;
        s.slot = slot;
        if (config.subspace) {
            const std::size_t d = config.dim_for(slot.rows);
            s.basis = config.basis_init == BasisInit::identity ? Tensor::identity(slot.rows)
                                                                : orthonormal_basis(slot.rows, d, rng);
            // Orthonormal columns shrink entry variance by d/rows; widen the coefficients so
            // S c starts with the Xavier statistics of a rows x cols slot.
            const double bound = std::sqrt(6.0 / double(slot.rows + slot.cols)) * std::sqrt(double(slot.rows) / double(d));
            s.coef = Tensor::zeros(d, slot.cols);
            for (auto& x : s.coef.data()) x = rng.uniform(-bound, bound);
            s.basis_opt = AdamWState::for_param(*s.basis, config.adamw);
        } else {
            s.coef = xavier_uniform({slot.rows, slot.cols}, rng);
        }
        s.coef_opt = AdamWState::for_param(s.coef, config.adamw);
        state.slots.push_back(std::move(s));
    }
    return state;
}

Var reconstruct_slot(const Var& basis, const Var& coef) { return basis.defined() ? ad::matmul(basis, coef) : coef; }

std::vector<Var> reconstruct(std::span<const Var> bases, std::span<const Var> coefs) {
    if (bases.size() != coefs.size()) throw DimensionError("reconstruct: basis and coefficient counts differ");
    std::vector<Var> out;
    out.reserve(coefs.size());
    for (std::size_t i = 0; i < coefs.size(); ++i) out.push_back(reconstruct_slot(bases[i], coefs[i]));
    return out;
}

std::vector<Tensor> reconstruct_params(const MetaState& state) {
    ad::NoGradGuard no_grad;
    std::vector<Tensor> out;
    for (const auto& s : state.slots) {
        const Var basis = s.basis ? Var::constant(*s.basis) : Var{};
        Var w = reconstruct_slot(basis, Var::constant(s.coef));
        if (w.rows() != s.slot.rows || w.cols() != s.slot.cols)
            throw DimensionError("reconstruct: slot " + s.slot.name + " came out " + w.value().shape_string());
        out.push_back(w.value());
    }
    return out;
}

namespace {

struct InnerResult {
    std::vector<Var> coefs;
    double first_support_loss = 0.0;
};

// Differentiable inner loop. First-order mode detaches the support gradient, so the
// adapted coefficients depend on the initial ones only through the identity path.
InnerResult adapt(std::span<const Var> bases, std::vector<Var> coefs, const Objective& objective,
                  std::span<const SampleRef> support, double alpha, std::size_t steps, bool second_order) {
    InnerResult r;
    for (std::size_t step = 0; step < steps; ++step) {
        const Var loss = objective.loss(reconstruct(bases, coefs), support);
        if (step == 0) r.first_support_loss = loss.value().item();
        const auto grads = ad::grad(loss, coefs, second_order);
        for (std::size_t i = 0; i < coefs.size(); ++i) {
            const Var g = second_order ? grads[i] : Var::constant(grads[i].value());
            coefs[i] = ad::sub(coefs[i], ad::scale(g, alpha));
        }
    }
    r.coefs = std::move(coefs);
    return r;
}

}  // namespace

std::vector<Tensor> inner_adapt(const MetaState& state, const Objective& objective, std::span<const SampleRef> support,
                                double alpha, std::size_t steps) {
    if (!(alpha > 0.0)) throw ConfigError("inner_adapt: alpha must be positive");
    std::vector<Var> bases, coefs;
    for (const auto& s : state.slots) {
        bases.push_back(s.basis ? Var::constant(*s.basis) : Var{});
        coefs.push_back(Var::parameter(s.coef));
    }
    const auto r = adapt(bases, std::move(coefs), objective, support, alpha, steps, false);
    std::vector<Tensor> out;
    for (const auto& c : r.coefs) out.push_back(c.value());
    return out;
}

EpisodeResult episode_meta_gradient(const MetaState& state, const Objective& objective, const Episode& episode) {
    if (episode.support.empty() || episode.query.empty()) throw ContractError("episode: empty support or query set");
    const auto& cfg = state.config;
    std::vector<Var> bases, coefs;
    for (const auto& s : state.slots) {
        bases.push_back(!s.basis ? Var{} : cfg.update_bases ? Var::parameter(*s.basis) : Var::constant(*s.basis));
        coefs.push_back(Var::parameter(s.coef));
    }
    const auto inner = adapt(bases, coefs, objective, episode.support, cfg.alpha, cfg.inner_steps, cfg.second_order);
    const Var query =
        ad::scale(objective.loss(reconstruct(bases, inner.coefs), episode.query), 1.0 / double(episode.query.size()));

    std::vector<Var> wrt = coefs;
    wrt.insert(wrt.end(), bases.begin(), bases.end());
    const auto grads = ad::grad(query, wrt);
    EpisodeResult r;
    r.support_loss = inner.first_support_loss;
    r.query_loss = query.value().item();
    for (std::size_t i = 0; i < coefs.size(); ++i) {
        r.coef_grads.push_back(grads[i].value());
        const auto& gb = grads[coefs.size() + i];
        r.basis_grads.push_back(gb.defined() ? gb.value() : Tensor{});
    }
    return r;
}

MetaState outer_step(const MetaState& state, const Objective& objective, std::span<const Episode> episodes,
                     StepStats* stats) {
    if (episodes.empty()) throw ContractError("outer_step: empty episode batch");
    const auto& cfg = state.config;
    cfg.validate();

    std::vector<EpisodeResult> results(episodes.size());
    std::exception_ptr failure;
    const int n = static_cast<int>(episodes.size());
#pragma omp parallel for num_threads(static_cast<int>(cfg.workers)) schedule(static)
    for (int e = 0; e < n; ++e) {
        try {
            results[static_cast<std::size_t>(e)] = episode_meta_gradient(state, objective, episodes[static_cast<std::size_t>(e)]);
        } catch (...) {
#pragma omp critical(cotsm_outer_failure)
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    // Fixed-order reduction: the update never depends on thread scheduling.
    const double weight = cfg.sum_episodes ? 1.0 : 1.0 / double(episodes.size());
    MetaState next = state;
    double support = 0.0, query = 0.0;
    for (const auto& r : results) {
        support += r.support_loss;
        query += r.query_loss;
    }
    for (std::size_t j = 0; j < next.slots.size(); ++j) {
        auto& s = next.slots[j];
        auto accumulate = [&](auto pick) {
            Tensor g = Tensor::zeros(pick(results.front()).shape());
            for (const auto& r : results) {
                const auto& part = pick(r);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += part[i];
            }
            for (auto& x : g.data()) x *= weight;
            return g;
        };
        auto apply = [&](Tensor& param, AdamWState& opt, const Tensor& g) {
            if (cfg.outer == OuterOptimizer::sgd) {
                param = sgd_step(param, g, cfg.beta);
            } else {
                auto [p, o] = adamw_step(param, g, std::move(opt), cfg.beta);
                param = std::move(p);
                opt = std::move(o);
            }
        };
        apply(s.coef, s.coef_opt, accumulate([j](const EpisodeResult& r) -> const Tensor& { return r.coef_grads[j]; }));
        if (s.basis && cfg.update_bases)
            apply(*s.basis, s.basis_opt,
                  accumulate([j](const EpisodeResult& r) -> const Tensor& { return r.basis_grads[j]; }));
    }
    next.iteration += 1;
    if (stats) {
        stats->mean_support_loss = support / double(results.size());
        stats->mean_query_loss = query / double(results.size());
    }
    return next;
}

MetaState meta_train(MetaState state, const Objective& objective, const world::Dataset& data,
                     const EpisodeShape& shape, std::size_t iterations, Rng& rng, const IterationHook& hook) {
    using clock = std::chrono::steady_clock;
    for (std::size_t it = 0; it < iterations; ++it) {
        const auto start = clock::now();
        std::vector<Episode> batch;
        for (std::size_t b = 0; b < state.config.batch; ++b) batch.push_back(sample_episode(data, shape, rng));
        StepStats stats;
        state = outer_step(state, objective, batch, &stats);
        if (!std::isfinite(stats.mean_query_loss) || !std::isfinite(stats.mean_support_loss))
            throw NumericError("meta_train: non-finite loss at iteration " + std::to_string(state.iteration));
        if (hook) {
            const double ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
            hook({state.iteration, stats.mean_support_loss, stats.mean_query_loss, ms}, state);
        }
    }
    return state;
}

// ---- serialization ------------------------------------------------------------------

nlohmann::json to_json(const MetaConfig& c) {
    return {{"alpha", c.alpha},
            {"beta", c.beta},
            {"inner_steps", c.inner_steps},
            {"batch", c.batch},
            {"subspace", c.subspace},
            {"subspace_dim", c.subspace_dim},
            {"full_subspace", c.full_subspace},
            {"basis_init", c.basis_init == BasisInit::identity ? "identity" : "orthonormal"},
            {"update_bases", c.update_bases},
            {"second_order", c.second_order},
            {"outer_optimizer", c.outer == OuterOptimizer::sgd ? "sgd" : "adamw"},
            {"sum_episodes", c.sum_episodes},
            {"adamw",
             {{"beta1", c.adamw.beta1},
              {"beta2", c.adamw.beta2},
              {"epsilon", c.adamw.epsilon},
              {"weight_decay", c.adamw.weight_decay}}},
            {"workers", c.workers}};
}

MetaConfig meta_config_from_json(const nlohmann::json& doc) {
    MetaConfig c;
    auto field = [&](const char* name, auto& out) {
        if (!doc.contains(name)) return;
        try {
            doc.at(name).get_to(out);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("meta.") + name + ": wrong type");
        }
    };
    if (!doc.is_object()) throw ConfigError("meta: expected an object");
    field("alpha", c.alpha);
    field("beta", c.beta);
    field("inner_steps", c.inner_steps);
    field("batch", c.batch);
    field("subspace", c.subspace);
    field("subspace_dim", c.subspace_dim);
    field("full_subspace", c.full_subspace);
    std::string basis = "orthonormal", outer = "adamw";
    field("basis_init", basis);
    field("outer_optimizer", outer);
    if (basis != "orthonormal" && basis != "identity") throw ConfigError("meta.basis_init: orthonormal or identity");
    if (outer != "adamw" && outer != "sgd") throw ConfigError("meta.outer_optimizer: adamw or sgd");
    c.basis_init = basis == "identity" ? BasisInit::identity : BasisInit::orthonormal;
    c.outer = outer == "sgd" ? OuterOptimizer::sgd : OuterOptimizer::adamw;
    field("update_bases", c.update_bases);
    field("second_order", c.second_order);
    field("sum_episodes", c.sum_episodes);
    field("workers", c.workers);
    if (doc.contains("adamw")) {
        const auto& a = doc.at("adamw");
        try {
            c.adamw.beta1 = a.value("beta1", c.adamw.beta1);
            c.adamw.beta2 = a.value("beta2", c.adamw.beta2);
            c.adamw.epsilon = a.value("epsilon", c.adamw.epsilon);
            c.adamw.weight_decay = a.value("weight_decay", c.adamw.weight_decay);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("meta.adamw: expected numeric beta1/beta2/epsilon/weight_decay");
        }
    }
    c.validate();
    return c;
}

namespace {

nlohmann::json opt_json(const AdamWState& s) {
    return {{"m", tensor_to_json(s.first_moment)}, {"v", tensor_to_json(s.second_moment)}, {"t", s.step_count}};
}

AdamWState opt_from_json(const nlohmann::json& doc, const AdamWHyper& hyper) {
    AdamWState s;
    s.first_moment = tensor_from_json(doc.at("m"));
    s.second_moment = tensor_from_json(doc.at("v"));
    s.step_count = doc.at("t").get<std::uint64_t>();
    s.hyper = hyper;
    return s;
}

}  // namespace

nlohmann::json to_json(const MetaState& state) {
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& s : state.slots) {
        nlohmann::json j = {{"step", s.slot.step},
                            {"name", s.slot.name},
                            {"rows", s.slot.rows},
                            {"cols", s.slot.cols},
                            {"coef", tensor_to_json(s.coef)},
                            {"coef_opt", opt_json(s.coef_opt)}};
        if (s.basis) {
            j["basis"] = tensor_to_json(*s.basis);
            j["basis_opt"] = opt_json(s.basis_opt);
        }
        slots.push_back(std::move(j));
    }
    auto config = to_json(state.config);
    config.erase("workers");  // a run setting, not part of the learned state
    return {{"config", config}, {"iteration", state.iteration}, {"slots", slots}};
}

MetaState meta_state_from_json(const nlohmann::json& doc) {
    try {
        MetaState state;
        state.config = meta_config_from_json(doc.at("config"));
        state.iteration = doc.at("iteration").get<std::uint64_t>();
        for (const auto& j : doc.at("slots")) {
            SlotState s;
            s.slot = {j.at("step").get<std::size_t>(), j.at("name").get<std::string>(), j.at("rows").get<std::size_t>(),
                      j.at("cols").get<std::size_t>()};
            s.coef = tensor_from_json(j.at("coef"));
            s.coef_opt = opt_from_json(j.at("coef_opt"), state.config.adamw);
            if (j.contains("basis")) {
                s.basis = tensor_from_json(j.at("basis"));
                s.basis_opt = opt_from_json(j.at("basis_opt"), state.config.adamw);
            }
            state.slots.push_back(std::move(s));
        }
        reconstruct_params(state);  // shape check
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed meta checkpoint: ") + e.what());
    }
}

}  // namespace cotsm::meta
