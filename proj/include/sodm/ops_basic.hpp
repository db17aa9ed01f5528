#pragma once

#include <vector>

#include "sodm/tape.hpp"
#include "sodm/tensor.hpp"

namespace sodm {
namespace ops {

// Taped wrappers around the tensor-core primitives. Every function records
// one node whose backward closure captures only what the rule needs.

template <class T>
int add(Tape<T>& t, int a, int b) {
  Tensor4<T> av = t.val(a), bv = t.val(b);
  Tensor4<T> out = sodm::add(av, bv);
  return t.push(std::move(out), {a, b}, [av, bv](const Tensor4<T>& g) {
    return std::vector<Tensor4<T>>{g, reduce_to_shape(g, bv)};
  });
}

template <class T>
int mul(Tape<T>& t, int a, int b) {
  Tensor4<T> av = t.val(a), bv = t.val(b);
  Tensor4<T> out = sodm::mul(av, bv);
  return t.push(std::move(out), {a, b}, [av, bv](const Tensor4<T>& g) {
    Tensor4<T> ga = sodm::mul(g, bv);
    Tensor4<T> gb_full = g;
    for (size_t i = 0; i < gb_full.data.size(); ++i) gb_full.data[i] = g.data[i] * av.data[i];
    return std::vector<Tensor4<T>>{std::move(ga), reduce_to_shape(gb_full, bv)};
  });
}

template <class T>
int scale(Tape<T>& t, int a, T factor) {
  Tensor4<T> out = t.val(a);
  for (auto& v : out.data) v *= factor;
  ensure_finite(out, "scale");
  return t.push(std::move(out), {a}, [factor](const Tensor4<T>& g) {
    Tensor4<T> ga = g;
    for (auto& v : ga.data) v *= factor;
    return std::vector<Tensor4<T>>{std::move(ga)};
  });
}

template <class T>
int concat_channels(Tape<T>& t, const std::vector<int>& parts) {
  std::vector<Tensor4<T>> vals;
  vals.reserve(parts.size());
  for (int id : parts) vals.push_back(t.val(id));
  Tensor4<T> out = sodm::concat_channels(vals);
  std::vector<int> channels;
  for (const auto& v : vals) channels.push_back(v.c);
  return t.push(std::move(out), parts, [channels](const Tensor4<T>& g) {
    std::vector<Tensor4<T>> grads;
    int off = 0;
    for (int ch : channels) {
      grads.push_back(slice_channels(g, off, ch));
      off += ch;
    }
    return grads;
  });
}

template <class T>
int slice_channels(Tape<T>& t, int x, int start, int count) {
  Tensor4<T> xv = t.val(x);
  Tensor4<T> out = sodm::slice_channels(xv, start, count);
  int total = xv.c, n = xv.n, h = xv.h, w = xv.w;
  return t.push(std::move(out), {x}, [start, count, total, n, h, w](const Tensor4<T>& g) {
    Tensor4<T> gx(n, total, h, w);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < count; ++ch)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) gx.at(b, start + ch, y, xx) = g.at(b, ch, y, xx);
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

// Sum of all elements, as a 1x1x1x1 tensor.
template <class T>
int sum(Tape<T>& t, int x) {
  const Tensor4<T>& xv = t.val(x);
  Tensor4<T> out(1, 1, 1, 1);
  out.data[0] = sum_all(xv);
  ensure_finite(out, "sum");
  int n = xv.n, c = xv.c, h = xv.h, w = xv.w;
  return t.push(std::move(out), {x}, [n, c, h, w](const Tensor4<T>& g) {
    Tensor4<T> gx(n, c, h, w, g.data[0]);
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

// Pure dim reinterpretation; element order is unchanged.
template <class T>
int reshape(Tape<T>& t, int x, int n, int c, int h, int w) {
  const Tensor4<T>& xv = t.val(x);
  if (static_cast<size_t>(n) * c * h * w != xv.numel())
    throw ShapeError("reshape: cannot view " + xv.shape_str() + " as " + std::to_string(n) + "x" +
                     std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w));
  Tensor4<T> out(n, c, h, w);
  out.data = xv.data;
  int on = xv.n, oc = xv.c, oh = xv.h, ow = xv.w;
  return t.push(std::move(out), {x}, [on, oc, oh, ow](const Tensor4<T>& g) {
    Tensor4<T> gx(on, oc, oh, ow);
    gx.data = g.data;
    return std::vector<Tensor4<T>>{std::move(gx)};
  });
}

}  // namespace ops
}  // namespace sodm
