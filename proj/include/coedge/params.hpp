#pragma once

// Flat named parameter storage. Networks export their trainable values into a
// ParameterVector and can be rebound from one; every ensemble-level operation
// (momentum averaging, sampling, pruning, collapsing) works on this type
// without knowing anything about layers.

#include "coedge/core.hpp"

#include <cstring>
#include <numeric>

namespace coedge {

template <class Scalar>
struct ParameterVector {
  struct Entry {
    std::string name;
    std::vector<Index> shape;
    Vector<Scalar> values;
  };

  std::vector<Entry> entries;

  Index total_count() const {
    Index n = 0;
    for (const auto& e : entries) n += e.values.size();
    return n;
  }

  Entry& add(std::string name, std::vector<Index> shape) {
    Index n = std::accumulate(shape.begin(), shape.end(), Index(1),
                              std::multiplies<Index>());
    entries.push_back({std::move(name), std::move(shape), Vector<Scalar>::Zero(n)});
    return entries.back();
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  bool same_structure(const ParameterVector& o) const {
    if (entries.size() != o.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].name != o.entries[i].name) return false;
      if (entries[i].shape != o.entries[i].shape) return false;
    }
    return true;
  }

  void require_same_structure(const ParameterVector& o) const {
    if (!same_structure(o))
      throw ShapeError("parameter vectors have mismatched entries");
  }

  template <class Other>
  ParameterVector<Other> cast() const {
    ParameterVector<Other> out;
    out.entries.reserve(entries.size());
    for (const auto& e : entries)
      out.entries.push_back({e.name, e.shape, e.values.template cast<Other>()});
    return out;
  }
};

// out = a*x + b*y, entrywise over matching entries.
template <class Scalar>
ParameterVector<Scalar> combine(Scalar a, const ParameterVector<Scalar>& x,
                                Scalar b, const ParameterVector<Scalar>& y) {
  x.require_same_structure(y);
  ParameterVector<Scalar> out = x;
  for (std::size_t i = 0; i < out.entries.size(); ++i)
    out.entries[i].values = a * x.entries[i].values + b * y.entries[i].values;
  return out;
}

template <class Scalar>
ParameterVector<Scalar> scaled(const ParameterVector<Scalar>& x, Scalar a) {
  ParameterVector<Scalar> out = x;
  for (auto& e : out.entries) e.values *= a;
  return out;
}

template <class Scalar>
void accumulate_scaled(ParameterVector<Scalar>& acc,
                       const ParameterVector<Scalar>& x, Scalar a) {
  acc.require_same_structure(x);
  for (std::size_t i = 0; i < acc.entries.size(); ++i)
    acc.entries[i].values += a * x.entries[i].values;
}

template <class Scalar>
ParameterVector<Scalar> zeros_like(const ParameterVector<Scalar>& x) {
  ParameterVector<Scalar> out = x;
  for (auto& e : out.entries) e.values.setZero();
  return out;
}

template <class Scalar>
bool bitwise_equal(const ParameterVector<Scalar>& a,
                   const ParameterVector<Scalar>& b) {
  if (!a.same_structure(b)) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    if (std::memcmp(a.entries[i].values.data(), b.entries[i].values.data(),
                    sizeof(Scalar) * a.entries[i].values.size()) != 0)
      return false;
  return true;
}

template <class Scalar>
Scalar max_abs_difference(const ParameterVector<Scalar>& a,
                          const ParameterVector<Scalar>& b) {
  a.require_same_structure(b);
  Scalar m = 0;
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    m = std::max(m, (a.entries[i].values - b.entries[i].values)
                        .cwiseAbs()
                        .maxCoeff());
  return m;
}

}  // namespace coedge
