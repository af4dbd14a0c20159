#pragma once

#include "d2d/autograd.hpp"
#include "d2d/util.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace d2d {

// Owns every learnable tensor of a model, addressable by hierarchical name
// ("fusion.block0.qkv.w"). Parameter addresses are stable for the lifetime of
// the store, so layers may keep raw pointers into it.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(const std::string& name, Mat init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> with_prefix(const std::string& prefix);

  void zero_grad();
  std::size_t scalar_count() const;

  // Hash over names, shapes and raw value bytes of every parameter whose
  // name starts with prefix.
  std::uint64_t hash(const std::string& prefix = "") const;

  // Copies values from a store with the identical name/shape layout.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

namespace init {
Mat xavier_uniform(Eigen::Index in, Eigen::Index out, Rng& rng);
Mat normal(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng);
}  // namespace init

struct Linear {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  static Linear create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
                       Rng& rng, bool bias = true);
  Var operator()(const Var& x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNorm create(ParamStore& store, const std::string& name, Eigen::Index dim);
  Var operator()(const Var& x) const;
};

// Pre-norm ViT encoder block: x + MHA(LN(x)), then x + MLP(LN(x)) with GELU.
struct TransformerBlock {
  LayerNorm ln1;
  Linear qkv;
  Linear proj;
  LayerNorm ln2;
  Linear fc1;
  Linear fc2;
  int heads = 1;

  static TransformerBlock create(ParamStore& store, const std::string& name, Eigen::Index dim,
                                 int heads, Eigen::Index mlp_dim, Rng& rng);
  Var operator()(const Var& x) const;
};

struct Transformer {
  std::vector<TransformerBlock> blocks;
  LayerNorm norm;

  static Transformer create(ParamStore& store, const std::string& name, int layers, Eigen::Index dim,
                            int heads, Eigen::Index mlp_dim, Rng& rng);
  Var operator()(const Var& x) const;
};

}  // namespace d2d
