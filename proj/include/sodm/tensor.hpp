#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "sodm/errors.hpp"
#include "sodm/rng.hpp"

namespace sodm {

// Dense rank-4 array in (batch, channel, height, width) order, row-major,
// offset(b,ch,y,x) = ((b*C + ch)*H + y)*W + x.
template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw ShapeError("negative dimension in tensor constructor");
  }

  size_t numel() const { return data.size(); }
  bool same_dims(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  T& at(int b, int ch, int y, int x) {
    return data[((static_cast<size_t>(b) * c + ch) * h + y) * w + x];
  }
  const T& at(int b, int ch, int y, int x) const {
    return data[((static_cast<size_t>(b) * c + ch) * h + y) * w + x];
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }

  static Tensor4 zeros_like(const Tensor4& o) { return Tensor4(o.n, o.c, o.h, o.w); }

  static Tensor4 full(int n, int c, int h, int w, T v) { return Tensor4(n, c, h, w, v); }

  static Tensor4 random_uniform(int n, int c, int h, int w, SplitMix64& rng, T lo, T hi) {
    Tensor4 t(n, c, h, w);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
  }

  template <class U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n, c, h, w);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

template <class T>
void ensure_finite(const Tensor4<T>& t, const char* op) {
  for (size_t i = 0; i < t.data.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t.data[i]))) {
      std::ostringstream os;
      os << op << " produced non-finite value at flat index " << i << " (shape " << t.shape_str() << ")";
      throw NumericError(os.str());
    }
  }
}

// ---- elementwise add/mul with the two supported broadcast forms ----
// b may match a exactly, or have c=1 (channel broadcast), or h=w=1 (spatial
// broadcast).

enum class BroadcastKind { None, Channel, Spatial };

template <class T>
inline BroadcastKind broadcast_kind(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.same_dims(b)) return BroadcastKind::None;
  if (b.c == 1 && b.n == a.n && b.h == a.h && b.w == a.w) return BroadcastKind::Channel;
  if (b.h == 1 && b.w == 1 && b.n == a.n && b.c == a.c) return BroadcastKind::Spatial;
  throw ShapeError("incompatible operand shapes " + a.shape_str() + " vs " + b.shape_str());
}

template <class T, class F>
Tensor4<T> elementwise_binary(const Tensor4<T>& a, const Tensor4<T>& b, F f) {
  BroadcastKind kind = broadcast_kind(a, b);
  Tensor4<T> out(a.n, a.c, a.h, a.w);
  for (int bi = 0; bi < a.n; ++bi)
    for (int ch = 0; ch < a.c; ++ch)
      for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) {
          T bv;
          switch (kind) {
            case BroadcastKind::None: bv = b.at(bi, ch, y, x); break;
            case BroadcastKind::Channel: bv = b.at(bi, 0, y, x); break;
            default: bv = b.at(bi, ch, 0, 0); break;
          }
          out.at(bi, ch, y, x) = f(a.at(bi, ch, y, x), bv);
        }
  return out;
}

template <class T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  auto out = elementwise_binary(a, b, [](T x, T y) { return x + y; });
  ensure_finite(out, "add");
  return out;
}

template <class T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
  auto out = elementwise_binary(a, b, [](T x, T y) { return x * y; });
  ensure_finite(out, "mul");
  return out;
}

// Reduce a full-shaped gradient back onto the (possibly broadcast) operand b.
template <class T>
Tensor4<T> reduce_to_shape(const Tensor4<T>& grad, const Tensor4<T>& like) {
  if (grad.same_dims(like)) return grad;
  Tensor4<T> out = Tensor4<T>::zeros_like(like);
  if (like.c == 1 && like.n == grad.n && like.h == grad.h && like.w == grad.w) {
    for (int b = 0; b < grad.n; ++b)
      for (int ch = 0; ch < grad.c; ++ch)
        for (int y = 0; y < grad.h; ++y)
          for (int x = 0; x < grad.w; ++x) out.at(b, 0, y, x) += grad.at(b, ch, y, x);
    return out;
  }
  if (like.h == 1 && like.w == 1 && like.n == grad.n && like.c == grad.c) {
    for (int b = 0; b < grad.n; ++b)
      for (int ch = 0; ch < grad.c; ++ch)
        for (int y = 0; y < grad.h; ++y)
          for (int x = 0; x < grad.w; ++x) out.at(b, ch, 0, 0) += grad.at(b, ch, y, x);
    return out;
  }
  throw ShapeError("cannot reduce gradient " + grad.shape_str() + " to " + like.shape_str());
}

template <class T>
Tensor4<T> concat_channels(const std::vector<Tensor4<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty part list");
  int n = parts[0].n, h = parts[0].h, w = parts[0].w, c = 0;
  for (const auto& p : parts) {
    if (p.n != n || p.h != h || p.w != w)
      throw ShapeError("concat_channels: part " + p.shape_str() + " incompatible with " +
                       parts[0].shape_str());
    c += p.c;
  }
  Tensor4<T> out(n, c, h, w);
  int off = 0;
  for (const auto& p : parts) {
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < p.c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) out.at(b, off + ch, y, x) = p.at(b, ch, y, x);
    off += p.c;
  }
  return out;
}

template <class T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int start, int count) {
  if (start < 0 || count < 0 || start + count > x.c)
    throw ShapeError("slice_channels: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") out of " + std::to_string(x.c));
  Tensor4<T> out(x.n, count, x.h, x.w);
  for (int b = 0; b < x.n; ++b)
    for (int ch = 0; ch < count; ++ch)
      for (int y = 0; y < x.h; ++y)
        for (int x_ = 0; x_ < x.w; ++x_) out.at(b, ch, y, x_) = x.at(b, start + ch, y, x_);
  return out;
}

template <class T>
T sum_all(const Tensor4<T>& x) {
  T s = T(0);
  for (T v : x.data) s += v;  // fixed left-to-right order
  return s;
}

}  // namespace sodm
