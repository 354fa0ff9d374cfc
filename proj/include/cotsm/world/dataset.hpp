#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cotsm/numerics/rng.hpp"
#include "cotsm/numerics/tensor.hpp"
#include "cotsm/world/grammar.hpp"

namespace cotsm::world {

struct Scene {
    std::string subject;
    std::string object;
    std::string verb;
    std::uint64_t noise_seed = 0;
    friend bool operator==(const Scene&, const Scene&) = default;
};

struct CaptionedSample {
    std::uint64_t id = 0;
    Scene scene;
    int category_id = 0;
    Tensor image_feature;         // [d_v]
    std::vector<Tokens> references;  // 1..5 captions, no specials
    friend bool operator==(const CaptionedSample&, const CaptionedSample&) = default;
};

using Dataset = std::vector<CaptionedSample>;

struct CategorySplit {
    std::set<int> meta_train;
    std::set<int> meta_test;

    // Throws DataError when the sets overlap.
    void check_disjoint() const;
    friend bool operator==(const CategorySplit&, const CategorySplit&) = default;
};

// Shuffles the categories and holds out `test_categories` of them.
CategorySplit make_split(int categories, int test_categories, Rng& rng);

Scene sample_scene(const Grammar& grammar, int category_id, Rng& rng);

// `count` distinct realizations (1..5) of the scene under the grammar's templates and synonyms.
std::vector<Tokens> realize_captions(const Grammar& grammar, const Scene& scene, Rng& rng, int count);

// True when every reference carries the scene's subject, verb and object (or synonyms).
bool caption_realizes(const Grammar& grammar, const Scene& scene, const Tokens& caption);

using FeatureFn = std::function<Tensor(const Scene&)>;

struct DatasetSpec {
    int per_category = 30;
    int references = 5;
    int min_per_category = 2;  // K_shot + L of the episodes the data must support
};

// per_category samples for every category; routed to (train, test) by the split.
std::pair<Dataset, Dataset> make_dataset(const Grammar& grammar, const CategorySplit& split, const DatasetSpec& spec,
                                         const FeatureFn& encode, Rng& rng);

// Every category present in the dataset.
std::set<int> categories_in(const Dataset& data);

nlohmann::json to_json(const CaptionedSample& sample);
CaptionedSample sample_from_json(const nlohmann::json& doc);

void write_jsonl(std::ostream& out, const Dataset& data);
Dataset read_jsonl(std::istream& in);

nlohmann::json to_json(const CategorySplit& split);
CategorySplit split_from_json(const nlohmann::json& doc);

}  // namespace cotsm::world
