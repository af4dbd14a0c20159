#include "d2d/nn.hpp"

#include <cmath>
#include <cstdio>

namespace d2d {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Parameter& ParamStore::add(const std::string& name, Mat init) {
  if (contains(name)) throw ConfigError("duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(init);
  p->zero_grad();
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return *params_[it->second];
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::uint64_t ParamStore::hash(const std::string& prefix) const {
  Fnv1a h;
  for (const auto& p : params_) {
    if (p->name.compare(0, prefix.size(), prefix) != 0) continue;
    h.update(p->name);
    const std::int64_t shape[2] = {p->value.rows(), p->value.cols()};
    h.update(shape, sizeof shape);
    h.update(p->value.data(), sizeof(double) * static_cast<std::size_t>(p->value.size()));
  }
  return h.digest();
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.params_.size() != params_.size())
    throw ConfigError("copy_values_from: parameter count differs");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = *other.params_[i];
    auto& dst = *params_[i];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols())
      throw ConfigError("copy_values_from: layout mismatch at " + dst.name);
    dst.value = src.value;
  }
}

namespace init {

Mat xavier_uniform(Eigen::Index in, Eigen::Index out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Mat m(in, out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

Mat normal(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

}  // namespace init

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
                      Rng& rng, bool bias) {
  Linear l;
  l.w = &store.add(name + ".w", init::xavier_uniform(in, out, rng));
  if (bias) l.b = &store.add(name + ".b", Mat::Zero(1, out));
  return l;
}

Var Linear::operator()(const Var& x) const {
  return ops::linear(x, Var::param(*w), b ? Var::param(*b) : Var());
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, Eigen::Index dim) {
  LayerNorm ln;
  ln.gamma = &store.add(name + ".gamma", Mat::Ones(1, dim));
  ln.beta = &store.add(name + ".beta", Mat::Zero(1, dim));
  return ln;
}

Var LayerNorm::operator()(const Var& x) const {
  return ops::layer_norm(x, Var::param(*gamma), Var::param(*beta));
}

TransformerBlock TransformerBlock::create(ParamStore& store, const std::string& name, Eigen::Index dim,
                                          int heads, Eigen::Index mlp_dim, Rng& rng) {
  if (heads < 1 || dim % heads != 0)
    throw ConfigError(name + ": hidden size " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  TransformerBlock b;
  b.heads = heads;
  b.ln1 = LayerNorm::create(store, name + ".ln1", dim);
  b.qkv = Linear::create(store, name + ".qkv", dim, 3 * dim, rng);
  b.proj = Linear::create(store, name + ".proj", dim, dim, rng);
  b.ln2 = LayerNorm::create(store, name + ".ln2", dim);
  b.fc1 = Linear::create(store, name + ".fc1", dim, mlp_dim, rng);
  b.fc2 = Linear::create(store, name + ".fc2", mlp_dim, dim, rng);
  return b;
}

Var TransformerBlock::operator()(const Var& x) const {
  Var h = ops::add(x, proj(ops::multi_head_attention(qkv(ln1(x)), heads)));
  return ops::add(h, fc2(ops::gelu(fc1(ln2(h)))));
}

Transformer Transformer::create(ParamStore& store, const std::string& name, int layers,
                                Eigen::Index dim, int heads, Eigen::Index mlp_dim, Rng& rng) {
  Transformer t;
  for (int i = 0; i < layers; ++i)
    t.blocks.push_back(
        TransformerBlock::create(store, name + ".block" + std::to_string(i), dim, heads, mlp_dim, rng));
  t.norm = LayerNorm::create(store, name + ".norm", dim);
  return t;
}

Var Transformer::operator()(const Var& x) const {
  Var h = x;
  for (const auto& b : blocks) h = b(h);
  return norm(h);
}

}  // namespace d2d
