// SPDX-License-Identifier: Apache-2.0
#include "tckd/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace tckd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Tensor& ParameterSet::add(const std::string& name, Tensor t) {
  if (entries_.count(name)) throw std::invalid_argument("parameter set: duplicate name '" + name + "'");
  t.set_requires_grad(true);
  return entries_.emplace(name, std::move(t)).first->second;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("parameter set: no entry '" + name + "'");
  return it->second;
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("parameter set: no entry '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& [name, t] : entries_) out.add(name, t.detach());
  return out;
}

void ParameterSet::copy_values_from(const ParameterSet& src) {
  if (src.size() != size()) throw std::invalid_argument("parameter set: size mismatch in copy");
  for (auto& [name, t] : entries_) {
    const Tensor& s = src.get(name);
    if (s.shape() != t.shape()) {
      throw ShapeError("parameter set: '" + name + "' shape " + shape_str(t.shape()) + " vs " + shape_str(s.shape()));
    }
    std::copy(s.data().begin(), s.data().end(), t.mutable_data().begin());
  }
}

void ParameterSet::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
    const auto da = ia->second.data();
    const auto db = ib->second.data();
    if (std::memcmp(da.data(), db.data(), da.size_bytes()) != 0) return false;
  }
  return true;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = u(rng);
  return Tensor::from({fan_in, fan_out}, std::move(v));
}

Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = nd(rng);
  return Tensor::from({rows, cols}, std::move(v));
}

void adam_step(ParameterSet& params, AdamState& state) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw GraphError("adam_step: parameter '" + name + "' has no gradient");
    auto it = state.m.find(name);
    if (it != state.m.end() && it->second.size() != t.numel()) {
      throw ShapeError("adam_step: moment shape mismatch for '" + name + "'");
    }
  }
  state.step += 1;
  const auto& o = state.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(t.numel(), 0.0);
      v.assign(t.numel(), 0.0);
    }
    auto p = t.mutable_data();
    auto g = t.grad_buffer();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
      g[i] = 0.0;
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("checkpoint: truncated record");
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const std::string& header_json) {
  if (header_json.find('\n') != std::string::npos) throw CheckpointError("checkpoint: header must be one line");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::ios_base::failure("cannot open checkpoint for writing: " + path.string());
  os << kCheckpointMagic << '\n' << header_json << '\n';
  put<std::uint64_t>(os, params.size());
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.data().size_bytes()));
  }
  if (!os) throw std::ios_base::failure("failed writing checkpoint: " + path.string());
}

LoadedCheckpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::ios_base::failure("cannot open checkpoint: " + path.string());
  std::string magic;
  if (!std::getline(is, magic) || magic != kCheckpointMagic) {
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  }
  LoadedCheckpoint out;
  if (!std::getline(is, out.header_json)) throw CheckpointError("checkpoint: missing header");
  const auto count = take<std::uint64_t>(is);
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = take<std::uint32_t>(is);
    if (name_len > 4096) throw CheckpointError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointError("checkpoint: truncated name");
    const auto rank = take<std::uint32_t>(is);
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(take<std::uint64_t>(is));
    std::vector<double> values(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw CheckpointError("checkpoint: truncated values for '" + name + "'");
    }
    out.params.add(name, Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace tckd
