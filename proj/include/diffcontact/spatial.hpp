#pragma once

// Vector, quaternion and rigid-pose algebra, templated on the scalar so the
// same code runs on doubles and on taped ad::Var.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "diffcontact/scalar.hpp"

namespace diffcontact {

template <class S>
struct Vec3 {
  S x{}, y{}, z{};

  Vec3() = default;
  Vec3(S x_, S y_, S z_) : x(std::move(x_)), y(std::move(y_)), z(std::move(z_)) {}
  template <class U>
  explicit Vec3(const Vec3<U>& o) : x(S(o.x)), y(S(o.y)), z(S(o.z)) {}

  S& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  const S& operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  Vec3& operator*=(const S& s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }

  friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend Vec3 operator*(const Vec3& a, const S& s) { return {a.x * s, a.y * s, a.z * s}; }
  friend Vec3 operator*(const S& s, const Vec3& a) { return {a.x * s, a.y * s, a.z * s}; }
  friend Vec3 operator/(const Vec3& a, const S& s) { return {a.x / s, a.y / s, a.z / s}; }
};

using Vec3d = Vec3<double>;

template <class S>
S dot(const Vec3<S>& a, const Vec3<S>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class S>
Vec3<S> cross(const Vec3<S>& a, const Vec3<S>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class S>
S squared_norm(const Vec3<S>& a) {
  return dot(a, a);
}

template <class S>
S norm(const Vec3<S>& a) {
  return sqrt(squared_norm(a));
}

template <class S>
Vec3<S> normalized(const Vec3<S>& a) {
  return a / norm(a);
}

template <class S>
Vec3<double> value_of(const Vec3<S>& a) {
  return {val(a.x), val(a.y), val(a.z)};
}

/// Unit quaternion, scalar first. q and -q are the same rotation.
template <class S>
struct Quat {
  S w{1.0}, x{}, y{}, z{};

  Quat() = default;
  Quat(S w_, S x_, S y_, S z_) : w(std::move(w_)), x(std::move(x_)), y(std::move(y_)), z(std::move(z_)) {}
  template <class U>
  explicit Quat(const Quat<U>& o) : w(S(o.w)), x(S(o.x)), y(S(o.y)), z(S(o.z)) {}

  static Quat identity() { return {S(1.0), S(0.0), S(0.0), S(0.0)}; }

  Vec3<S> vec() const { return {x, y, z}; }

  friend Quat operator*(const Quat& a, const Quat& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  }
};

using Quatd = Quat<double>;

template <class S>
S dot(const Quat<S>& a, const Quat<S>& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class S>
Quat<S> conjugate(const Quat<S>& q) {
  return {q.w, -q.x, -q.y, -q.z};
}

template <class S>
Quat<S> normalized(const Quat<S>& q) {
  const S n = sqrt(dot(q, q));
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

/// R(q) v
template <class S>
Vec3<S> rotate(const Quat<S>& q, const Vec3<S>& v) {
  const Vec3<S> u = q.vec();
  const Vec3<S> t = cross(u, v) * S(2.0);
  return v + t * q.w + cross(u, t);
}

/// R(q)^T v
template <class S>
Vec3<S> rotate_inverse(const Quat<S>& q, const Vec3<S>& v) {
  return rotate(conjugate(q), v);
}

/// Exact quaternion exponential of a rotation vector: (cos |r|/2, sin(|r|/2) r/|r|).
template <class S>
Quat<S> quat_exp(const Vec3<S>& rotvec) {
  const S theta2 = squared_norm(rotvec);
  S c, k;
  if (val(theta2) < 1e-8) {
    // Series in theta^2 keeps the map smooth at the origin.
    c = S(1.0) - theta2 / 8.0 + theta2 * theta2 / 384.0;
    k = S(0.5) - theta2 / 48.0 + theta2 * theta2 / 3840.0;
  } else {
    const S theta = sqrt(theta2);
    c = cos(theta * 0.5);
    k = sin(theta * 0.5) / theta;
  }
  return {c, rotvec.x * k, rotvec.y * k, rotvec.z * k};
}

/// q ⊗ exp(h ω / 2) for body-frame angular velocity ω, renormalized.
template <class S>
Quat<S> quat_exp_integrate(const Quat<S>& q, const Vec3<S>& omega_body, double h) {
  if (!(h > 0.0)) throw ValidationError("quat_exp_integrate: step must be positive");
  return normalized(q * quat_exp(omega_body * S(h)));
}

/// Quaternion for a rotation of `angle` radians about unit `axis`.
inline Quatd axis_angle(const Vec3d& axis, double angle) {
  const Vec3d a = normalized(axis);
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), a.x * s, a.y * s, a.z * s};
}

/// Geodesic angle between two rotations, robust to sign. The atan2 form keeps
/// full precision near zero, where acos of the dot product does not. The
/// vector part of conj(a) b is grouped so that b = ±a cancels to exactly zero.
inline double rotation_angle_between(const Quatd& a, const Quatd& b) {
  const Vec3d va = a.vec(), vb = b.vec();
  const Vec3d v = (vb * a.w - va * b.w) - cross(va, vb);
  return 2.0 * std::atan2(norm(v), std::abs(dot(a, b)));
}

template <class S>
struct Pose {
  Vec3<S> position{};
  Quat<S> orientation = Quat<S>::identity();

  Pose() = default;
  Pose(Vec3<S> p, Quat<S> q) : position(std::move(p)), orientation(std::move(q)) {}
  template <class U>
  explicit Pose(const Pose<U>& o) : position(o.position), orientation(o.orientation) {}

  static Pose identity() { return {}; }
};

using Posed = Pose<double>;

template <class S>
Quatd value_of(const Quat<S>& q) {
  return {val(q.w), val(q.x), val(q.y), val(q.z)};
}

template <class S>
Posed value_of(const Pose<S>& p) {
  return {value_of(p.position), value_of(p.orientation)};
}

/// x_world = R(q) x + t
template <class S>
Vec3<S> pose_apply(const Pose<S>& p, const Vec3<S>& x) {
  return rotate(p.orientation, x) + p.position;
}

template <class S>
Pose<S> pose_inverse(const Pose<S>& p) {
  const Quat<S> qi = conjugate(p.orientation);
  return {-rotate(qi, p.position), qi};
}

/// (a ∘ b)(x) = a(b(x))
template <class S>
Pose<S> pose_compose(const Pose<S>& a, const Pose<S>& b) {
  return {pose_apply(a, b.position), normalized(a.orientation * b.orientation)};
}

/// Linear velocity in world frame, angular velocity in body frame.
template <class S>
struct Twist {
  Vec3<S> linear{};
  Vec3<S> angular{};

  Twist() = default;
  Twist(Vec3<S> l, Vec3<S> a) : linear(std::move(l)), angular(std::move(a)) {}
  template <class U>
  explicit Twist(const Twist<U>& o) : linear(o.linear), angular(o.angular) {}
};

using Twistd = Twist<double>;

/// n_d unit directions spanning the plane orthogonal to unit `n`, evenly
/// rotated by 2π/n_d. The first direction is the projection of the coordinate
/// axis least aligned with n (ties broken x, y, z); the fan turns about n
/// right-handedly.
template <class S>
std::vector<Vec3<S>> tangent_basis(const Vec3<S>& n, int n_d = 4) {
  if (n_d < 2 || n_d % 2 != 0) throw ValidationError("tangent_basis: n_d must be even and >= 2");
  const Vec3d nv = value_of(n);
  if (std::abs(norm(nv) - 1.0) > 1e-6) throw ValidationError("tangent_basis: normal is not unit length");
  int axis = 0;
  for (int k = 1; k < 3; ++k) {
    if (std::abs(nv[k]) < std::abs(nv[axis])) axis = k;
  }
  Vec3<S> seed{S(0.0), S(0.0), S(0.0)};
  seed[axis] = S(1.0);
  const Vec3<S> t1 = normalized(seed - n * n[axis]);
  const Vec3<S> t2 = cross(n, t1);
  std::vector<Vec3<S>> out;
  out.reserve(static_cast<std::size_t>(n_d));
  for (int i = 0; i < n_d; ++i) {
    const double a = 2.0 * std::numbers::pi * i / n_d;
    out.push_back(t1 * S(std::cos(a)) + t2 * S(std::sin(a)));
  }
  return out;
}

}  // namespace diffcontact
