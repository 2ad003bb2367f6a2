#include "flatness/params.hpp"

namespace flatness {

TangentVector& operator+=(TangentVector& a, const TangentVector& b) {
  require_congruent(a, b, "tangent +=");
  for_each_block(a, b, [](Tensor& x, const Tensor& y) { x.vec() += y.vec(); });
  return a;
}

TangentVector& operator-=(TangentVector& a, const TangentVector& b) {
  require_congruent(a, b, "tangent -=");
  for_each_block(a, b, [](Tensor& x, const Tensor& y) { x.vec() -= y.vec(); });
  return a;
}

TangentVector& operator*=(TangentVector& a, double s) {
  for (auto& w : a.weights) w.vec() *= s;
  for (auto& b : a.biases) b.vec() *= s;
  return a;
}

TangentVector operator+(TangentVector a, const TangentVector& b) { return a += b; }
TangentVector operator-(TangentVector a, const TangentVector& b) { return a -= b; }
TangentVector operator*(double s, TangentVector a) { return a *= s; }
TangentVector operator*(TangentVector a, double s) { return a *= s; }

ParamPoint displaced(const ParamPoint& point, double t, const TangentVector& direction) {
  require_congruent(point, direction, "displaced");
  ParamPoint out = point;
  for_each_block(out, direction, [t](Tensor& x, const Tensor& v) { x.vec() += t * v.vec(); });
  return out;
}

}  // namespace flatness
