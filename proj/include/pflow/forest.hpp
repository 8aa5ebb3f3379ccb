#pragma once

// Random Forest classifier: bootstrap-sampled, Gini-split decision trees
// with plurality voting. Training is deterministic for a given seed whatever
// the number of worker threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pflow/dataset.hpp"
#include "pflow/error.hpp"
#include "pflow/rng.hpp"

namespace pflow {

struct TrainConfig {
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_features;  // nullopt: floor(sqrt(n_features))
  std::size_t min_samples_leaf = 1;
  std::optional<std::size_t> max_depth;  // nullopt: unlimited
  bool bootstrap = true;
  std::uint64_t seed = 0;
  unsigned n_threads = 0;  // 0: hardware concurrency; does not affect the result

  void validate() const {
    if (n_trees < 1) throw InvalidConfig("n_trees must be >= 1");
    if (max_features && *max_features < 1) throw InvalidConfig("max_features must be >= 1");
    if (min_samples_leaf < 1) throw InvalidConfig("min_samples_leaf must be >= 1");
  }

  std::size_t features_per_split(std::size_t n_features) const {
    if (max_features) return std::min(*max_features, n_features);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(n_features))));
  }
};

// 1 - sum(p_i^2) over class counts.
inline double gini_impurity(std::span<const std::size_t> counts) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  if (n == 0) return 0.0;
  double sum_sq = 0;
  for (auto c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

struct TreeNode {
  static constexpr std::int32_t kLeaf = -1;

  std::int32_t feature = kLeaf;
  double threshold = 0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t label = 0;  // index into the forest's label set; leaves only

  bool is_leaf() const { return feature == kLeaf; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

// Nodes in a flat array; node 0 is the root. x goes left iff x[feature] <= threshold.
struct DecisionTree {
  std::vector<TreeNode> nodes;

  std::uint32_t predict(std::span<const double> x) const {
    std::uint32_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[i].label;
  }

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes[i].is_leaf()) {
        stack.push_back({nodes[i].left, d + 1});
        stack.push_back({nodes[i].right, d + 1});
      }
    }
    return best;
  }

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

// Plurality vote over label indices; ties go to the smallest index, which is
// the lexicographically smallest label because label sets are sorted.
inline std::uint32_t plurality(std::span<const std::uint32_t> votes, std::size_t n_labels) {
  std::vector<std::size_t> count(n_labels, 0);
  for (auto v : votes) ++count[v];
  return static_cast<std::uint32_t>(std::max_element(count.begin(), count.end()) - count.begin());
}

class RandomForest {
public:
  RandomForest() = default;
  RandomForest(std::vector<DecisionTree> trees, std::vector<std::string> schema,
               std::vector<std::string> labels, TrainConfig config)
      : trees_(std::move(trees)),
        schema_(std::move(schema)),
        labels_(std::move(labels)),
        config_(config) {}

  const std::vector<DecisionTree>& trees() const { return trees_; }
  const std::vector<std::string>& feature_schema() const { return schema_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const TrainConfig& config() const { return config_; }

  const std::string& predict(std::span<const double> x) const {
    if (x.size() != schema_.size()) {
      throw SchemaMismatch("expected " + std::to_string(schema_.size()) + " features, got " +
                           std::to_string(x.size()));
    }
    std::vector<std::uint32_t> votes;
    votes.reserve(trees_.size());
    for (const auto& t : trees_) votes.push_back(t.predict(x));
    return labels_[plurality(votes, labels_.size())];
  }

  const std::string& predict(const FeatureVector& x) const { return predict(std::span(x.values)); }

  std::vector<std::string> predict_batch(std::span<const FeatureVector> xs) const {
    std::vector<std::string> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(predict(x));
    return out;
  }

  friend bool operator==(const RandomForest&, const RandomForest&) = default;

private:
  std::vector<DecisionTree> trees_;
  std::vector<std::string> schema_;
  std::vector<std::string> labels_;
  TrainConfig config_;
};

// Row-major training matrix with integer class ids.
struct TrainingData {
  std::vector<double> x;  // n_rows * n_features
  std::size_t n_features = 0;
  std::vector<std::uint32_t> y;
  std::vector<std::string> labels;  // sorted, unique
  std::vector<std::string> schema;

  std::size_t n_rows() const { return y.size(); }
  double at(std::size_t row, std::size_t f) const { return x[row * n_features + f]; }

  static TrainingData from(const Dataset& ds) {
    TrainingData td;
    td.n_features = kFeatureCount;
    td.schema = ds.feature_schema;
    std::map<std::string, std::uint32_t> ids;
    for (const auto& f : ds.flows) ids.emplace(f.label, 0);
    for (auto& [label, id] : ids) {
      id = static_cast<std::uint32_t>(td.labels.size());
      td.labels.push_back(label);
    }
    td.x.reserve(ds.size() * kFeatureCount);
    for (const auto& f : ds.flows) {
      td.x.insert(td.x.end(), f.features.values.begin(), f.features.values.end());
      td.y.push_back(ids.at(f.label));
    }
    return td;
  }
};

namespace detail {

class TreeBuilder {
public:
  TreeBuilder(const TrainingData& data, const TrainConfig& config, std::uint64_t seed)
      : data_(data),
        config_(config),
        rng_(seed),
        n_classes_(data.labels.size()),
        per_split_(config.features_per_split(data.n_features)) {}

  DecisionTree build() {
    const std::size_t n = data_.n_rows();
    std::vector<std::uint32_t> rows(n);
    if (config_.bootstrap) {
      for (auto& r : rows) r = static_cast<std::uint32_t>(rng_.below(n));
    } else {
      for (std::size_t i = 0; i < n; ++i) rows[i] = static_cast<std::uint32_t>(i);
    }
    DecisionTree tree;
    grow(tree, std::move(rows), 0);
    return tree;
  }

private:
  struct Split {
    std::int32_t feature = TreeNode::kLeaf;
    double threshold = 0;
    double gain = -1;
  };

  std::uint32_t grow(DecisionTree& tree, std::vector<std::uint32_t> rows, std::size_t depth) {
    const auto index = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();

    std::vector<std::size_t> counts(n_classes_, 0);
    for (auto r : rows) ++counts[data_.y[r]];
    const auto majority =
        static_cast<std::uint32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    const bool pure = counts[majority] == rows.size();
    const bool depth_capped = config_.max_depth && depth >= *config_.max_depth;
    const bool too_small = rows.size() < 2 * config_.min_samples_leaf;

    Split split;
    if (!pure && !depth_capped && !too_small) split = best_split(rows, counts);
    if (split.feature == TreeNode::kLeaf) {
      tree.nodes[index].label = majority;
      return index;
    }

    std::vector<std::uint32_t> left, right;
    for (auto r : rows) {
      (data_.at(r, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right)
          .push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const auto l = grow(tree, std::move(left), depth + 1);
    const auto rr = grow(tree, std::move(right), depth + 1);
    auto& node = tree.nodes[index];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = rr;
    return index;
  }

  // Draws features without replacement until per_split_ non-constant ones
  // have been scored (or none remain). Zero-gain splits are accepted so that
  // an impure node is always divided when any feature varies.
  Split best_split(const std::vector<std::uint32_t>& rows, const std::vector<std::size_t>& counts) {
    const std::size_t m = rows.size();
    const double parent = gini_impurity(counts);
    std::vector<std::uint32_t> order(data_.n_features);
    for (std::size_t f = 0; f < order.size(); ++f) order[f] = static_cast<std::uint32_t>(f);

    Split best;
    std::vector<std::pair<double, std::uint32_t>> column(m);
    std::vector<std::size_t> left_counts(n_classes_);
    std::size_t scored = 0;
    for (std::size_t drawn = 0; drawn < order.size() && scored < per_split_; ++drawn) {
      std::swap(order[drawn], order[drawn + rng_.below(order.size() - drawn)]);
      const std::uint32_t f = order[drawn];
      for (std::size_t i = 0; i < m; ++i) column[i] = {data_.at(rows[i], f), data_.y[rows[i]]};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      ++scored;

      std::fill(left_counts.begin(), left_counts.end(), 0);
      for (std::size_t i = 0; i + 1 < m; ++i) {
        ++left_counts[column[i].second];
        if (column[i].first == column[i + 1].first) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = m - nl;
        if (nl < config_.min_samples_leaf || nr < config_.min_samples_leaf) continue;
        double sl = 0, sr = 0;
        for (std::size_t c = 0; c < n_classes_; ++c) {
          const auto lc = static_cast<double>(left_counts[c]);
          const auto rc = static_cast<double>(counts[c] - left_counts[c]);
          sl += lc * lc;
          sr += rc * rc;
        }
        const double dl = static_cast<double>(nl), dr = static_cast<double>(nr);
        const double child = (dl * (1.0 - sl / (dl * dl)) + dr * (1.0 - sr / (dr * dr))) /
                             static_cast<double>(m);
        const double gain = std::max(0.0, parent - child);
        if (gain > best.gain) {
          const double a = column[i].first, b = column[i + 1].first;
          double mid = a + (b - a) / 2.0;
          if (!(mid >= a && mid < b)) mid = a;
          best = {static_cast<std::int32_t>(f), mid, gain};
        }
      }
    }
    return best;
  }

  const TrainingData& data_;
  const TrainConfig& config_;
  Rng rng_;
  std::size_t n_classes_;
  std::size_t per_split_;
};

}  // namespace detail

// Per-tree seed: splitmix-derived from (seed, tree index).
inline std::uint64_t tree_seed(std::uint64_t seed, std::size_t tree_index) {
  return derive_seed(seed, tree_index);
}

inline RandomForest train(const TrainingData& data, const TrainConfig& config) {
  config.validate();
  if (data.n_rows() == 0) throw EmptyDataset("cannot train on an empty dataset");
  std::vector<DecisionTree> trees(config.n_trees);
  unsigned workers = config.n_threads ? config.n_threads : std::thread::hardware_concurrency();
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(config.n_trees)));
  auto work = [&](unsigned w) {
    for (std::size_t i = w; i < trees.size(); i += workers) {
      trees[i] = detail::TreeBuilder(data, config, tree_seed(config.seed, i)).build();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back([&work, w] { work(w); });
  }
  return RandomForest(std::move(trees), data.schema, data.labels, config);
}

inline RandomForest train(const Dataset& ds, const TrainConfig& config) {
  if (ds.empty()) throw EmptyDataset("cannot train on an empty dataset");
  return train(TrainingData::from(ds), config);
}

// ---------------------------------------------------------------------------
// JSON model format: trees are nested node objects, either
// {"feature": i, "threshold": t, "left": {...}, "right": {...}} or {"label": "..."}.

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["n_trees"] = c.n_trees;
  j["max_features"] = c.max_features ? nlohmann::json(*c.max_features) : nlohmann::json("sqrt");
  j["min_samples_leaf"] = c.min_samples_leaf;
  j["max_depth"] = c.max_depth ? nlohmann::json(*c.max_depth) : nlohmann::json(nullptr);
  j["bootstrap"] = c.bootstrap;
  j["seed"] = c.seed;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    c.n_trees = j.value("n_trees", c.n_trees);
    if (j.contains("max_features")) {
      const auto& mf = j["max_features"];
      if (mf.is_string()) {
        if (mf.get<std::string>() != "sqrt") throw InvalidConfig("max_features must be \"sqrt\" or an integer");
        c.max_features.reset();
      } else {
        c.max_features = mf.get<std::size_t>();
      }
    }
    c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
    if (j.contains("max_depth")) {
      if (j["max_depth"].is_null()) c.max_depth.reset();
      else c.max_depth = j["max_depth"].get<std::size_t>();
    }
    c.bootstrap = j.value("bootstrap", c.bootstrap);
    c.seed = j.value("seed", c.seed);
    c.n_threads = j.value("n_threads", c.n_threads);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const RandomForest& forest) {
  auto node_json = [&](const DecisionTree& t, std::uint32_t i, auto&& self) -> nlohmann::json {
    const auto& n = t.nodes[i];
    if (n.is_leaf()) return {{"label", forest.labels()[n.label]}};
    return {{"feature", n.feature},
            {"feature_name", forest.feature_schema()[static_cast<std::size_t>(n.feature)]},
            {"threshold", n.threshold},
            {"left", self(t, n.left, self)},
            {"right", self(t, n.right, self)}};
  };
  nlohmann::json j;
  j["format"] = "pflow-random-forest";
  j["version"] = 1;
  j["feature_schema"] = forest.feature_schema();
  j["labels"] = forest.labels();
  j["train_config"] = to_json(forest.config());
  j["trees"] = nlohmann::json::array();
  for (const auto& t : forest.trees()) j["trees"].push_back(node_json(t, 0, node_json));
  return j;
}

inline RandomForest forest_from_json(const nlohmann::json& j) {
  try {
    auto schema = j.at("feature_schema").get<std::vector<std::string>>();
    auto labels = j.at("labels").get<std::vector<std::string>>();
    if (!std::is_sorted(labels.begin(), labels.end())) throw SchemaMismatch("labels must be sorted");
    std::map<std::string, std::uint32_t> label_ids;
    for (std::size_t i = 0; i < labels.size(); ++i) label_ids[labels[i]] = static_cast<std::uint32_t>(i);
    std::vector<DecisionTree> trees;
    for (const auto& tj : j.at("trees")) {
      DecisionTree t;
      auto add = [&](const nlohmann::json& nj, auto&& self) -> std::uint32_t {
        const auto index = static_cast<std::uint32_t>(t.nodes.size());
        t.nodes.emplace_back();
        if (nj.contains("label")) {
          t.nodes[index].label = label_ids.at(nj["label"].get<std::string>());
          return index;
        }
        const auto feature = nj.at("feature").get<std::int32_t>();
        if (feature < 0 || static_cast<std::size_t>(feature) >= schema.size()) {
          throw SchemaMismatch("feature index out of range");
        }
        const auto l = self(nj.at("left"), self);
        const auto r = self(nj.at("right"), self);
        auto& n = t.nodes[index];
        n.feature = feature;
        n.threshold = nj.at("threshold").get<double>();
        n.left = l;
        n.right = r;
        return index;
      };
      add(tj, add);
      trees.push_back(std::move(t));
    }
    if (trees.empty()) throw SchemaMismatch("model has no trees");
    return RandomForest(std::move(trees), std::move(schema), std::move(labels),
                        train_config_from_json(j.value("train_config", nlohmann::json::object())));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("model: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw SchemaMismatch(std::string("model: unknown label: ") + e.what());
  }
}

}  // namespace pflow
