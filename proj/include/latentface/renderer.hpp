#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "latentface/tensor.hpp"

// Differentiable rendering of a canonical face (albedo + depth) under pose
// and light: diffuse shading on a fixed 64x64 grid mesh, perspective
// projection, hard z-buffered rasterization with barycentric attribute
// interpolation. Gradients flow through shading and barycentric
// interpolation; z-buffer visibility is treated as constant.
namespace lf::render {

template <class T>
struct PoseT {
  T yaw = 0, pitch = 0, roll = 0;
  T tx = 0, ty = 0, tz = 0;
  static PoseT identity() { return PoseT{}; }
};

template <class T>
struct LightT {
  T ka = 0, kd = 0, lx = 0, ly = 0;
  // relight used by frontalization
  static LightT neutral() { return LightT{T(0.7), T(0.3), T(0), T(0)}; }
};

// full light direction normalize(lx, ly, 1); z is always positive
template <class T>
std::array<T, 3> light_direction(const LightT<T>& light) {
  T ln = std::sqrt(light.lx * light.lx + light.ly * light.ly + T(1));
  return {light.lx / ln, light.ly / ln, T(1) / ln};
}

// Pose range limits fixed by the tanh-output mapping.
inline constexpr double kYawMax = 60.0 * M_PI / 180.0;
inline constexpr double kPitchMax = 30.0 * M_PI / 180.0;
inline constexpr double kRollMax = 30.0 * M_PI / 180.0;
inline constexpr double kTransMax = 0.1;

struct Camera {
  double fov_deg = 10.0;
  double f = 0.0;        // 1/f = 2 tan(fov/2)
  double z_offset = 0.0; // canonical depth 1 sits at projection distance f

  static Camera standard() {
    Camera c;
    c.f = 1.0 / (2.0 * std::tan(0.5 * c.fov_deg * M_PI / 180.0));
    c.z_offset = c.f - 1.0;
    return c;
  }
};

template <class T>
struct RenderOutputT {
  TensorT<T> image;          // [3,H,W], unclamped
  TensorT<uint8_t> mask;     // [H,W], 1 where a triangle covers the pixel
};

template <class T>
struct MeshT {
  TensorT<T> vertices;          // [H*W, 3] canonical positions (x,y,z)
  TensorT<int32_t> triangles;   // [2*(H-1)*(W-1), 3]
};

// Saved forward state so the backward pass can be replayed per pixel.
template <class T>
struct RenderContextT {
  int h = 0, w = 0;
  Camera cam;
  PoseT<T> pose;
  LightT<T> light;
  TensorT<T> albedo;      // [3,H,W]
  TensorT<T> depth;       // [H,W]
  TensorT<T> normals;     // [3,H,W]
  TensorT<T> lambert;     // [H,W], n.L before the max(0,.) clamp
  TensorT<T> shaded;      // [3,H,W]
  TensorT<T> screen;      // [H*W, 3] per-vertex (u, v, Z)
  TensorT<int32_t> tri;   // [H,W] winning triangle id, -1 if none
  TensorT<T> bary;        // [H,W,3]
  TensorT<int32_t> tris;  // [n_tri, 3]
  RenderOutputT<T> out;
};

template <class T>
struct RenderGradsT {
  TensorT<T> d_albedo;  // [3,H,W]
  TensorT<T> d_depth;   // [H,W]
  std::array<T, 6> d_pose{};   // yaw,pitch,roll,tx,ty,tz
  std::array<T, 4> d_light{};  // ka,kd,lx,ly
};

namespace detail {

template <class T>
inline void check_finite_depth(const TensorT<T>& depth) {
  if (depth.rank() != 2) throw InvalidInputError("depth map must be H x W");
  if (!depth.all_finite()) throw InvalidInputError("depth map contains non-finite values");
}

// grid coordinate of index i on an n-point axis spanning [-1, 1]
template <class T>
inline T grid_coord(int64_t i, int64_t n) {
  return T(-1) + T(2) * static_cast<T>(i) / static_cast<T>(n - 1);
}

template <class T>
struct Mat3 {
  T m[9];
  std::array<T, 3> apply(T x, T y, T z) const {
    return {m[0] * x + m[1] * y + m[2] * z, m[3] * x + m[4] * y + m[5] * z,
            m[6] * x + m[7] * y + m[8] * z};
  }
  std::array<T, 3> apply_transposed(T x, T y, T z) const {
    return {m[0] * x + m[3] * y + m[6] * z, m[1] * x + m[4] * y + m[7] * z,
            m[2] * x + m[5] * y + m[8] * z};
  }
  static Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        T s = 0;
        for (int k = 0; k < 3; ++k) s += a.m[i * 3 + k] * b.m[k * 3 + j];
        r.m[i * 3 + j] = s;
      }
    return r;
  }
};

template <class T>
inline Mat3<T> rot_y(T a) {
  T c = std::cos(a), s = std::sin(a);
  return Mat3<T>{{c, 0, s, 0, 1, 0, -s, 0, c}};
}
template <class T>
inline Mat3<T> rot_x(T a) {
  T c = std::cos(a), s = std::sin(a);
  return Mat3<T>{{1, 0, 0, 0, c, -s, 0, s, c}};
}
template <class T>
inline Mat3<T> rot_z(T a) {
  T c = std::cos(a), s = std::sin(a);
  return Mat3<T>{{c, -s, 0, s, c, 0, 0, 0, 1}};
}
template <class T>
inline Mat3<T> drot_y(T a) {
  T c = std::cos(a), s = std::sin(a);
  return Mat3<T>{{-s, 0, c, 0, 0, 0, -c, 0, -s}};
}
template <class T>
inline Mat3<T> drot_x(T a) {
  T c = std::cos(a), s = std::sin(a);
  return Mat3<T>{{0, 0, 0, 0, -s, -c, 0, c, -s}};
}
template <class T>
inline Mat3<T> drot_z(T a) {
  T c = std::cos(a), s = std::sin(a);
  return Mat3<T>{{-s, -c, 0, c, -s, 0, 0, 0, 0}};
}

// R = Rz(roll) Rx(pitch) Ry(yaw), plus dR/d(angle) products
template <class T>
struct PoseRotation {
  Mat3<T> r, d_yaw, d_pitch, d_roll;
  explicit PoseRotation(const PoseT<T>& p) {
    Mat3<T> ry = rot_y(p.yaw), rx = rot_x(p.pitch), rz = rot_z(p.roll);
    r = Mat3<T>::mul(rz, Mat3<T>::mul(rx, ry));
    d_yaw = Mat3<T>::mul(rz, Mat3<T>::mul(rx, drot_y(p.yaw)));
    d_pitch = Mat3<T>::mul(rz, Mat3<T>::mul(drot_x(p.pitch), ry));
    d_roll = Mat3<T>::mul(drot_z(p.roll), Mat3<T>::mul(rx, ry));
  }
};

// twice the signed area of (p, q, r)
template <class T>
inline T area2(T pu, T pv, T qu, T qv, T ru, T rv) {
  return (qu - pu) * (rv - pv) - (qv - pv) * (ru - pu);
}

}  // namespace detail

// Fixed two-triangle split per grid cell; (x,y) on the regular [-1,1]^2 grid,
// z from the depth value at that grid point.
template <class T>
MeshT<T> build_grid_mesh(const TensorT<T>& depth) {
  detail::check_finite_depth(depth);
  int64_t h = depth.dim(0), w = depth.dim(1);
  MeshT<T> mesh;
  mesh.vertices = TensorT<T>({h * w, 3});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      int64_t v = i * w + j;
      mesh.vertices.at2(v, 0) = detail::grid_coord<T>(j, w);
      mesh.vertices.at2(v, 1) = detail::grid_coord<T>(i, h);
      mesh.vertices.at2(v, 2) = depth.at2(i, j);
    }
  mesh.triangles = TensorT<int32_t>({2 * (h - 1) * (w - 1), 3});
  int64_t t = 0;
  for (int64_t i = 0; i + 1 < h; ++i)
    for (int64_t j = 0; j + 1 < w; ++j) {
      int32_t a = static_cast<int32_t>(i * w + j);
      int32_t b = static_cast<int32_t>(i * w + j + 1);
      int32_t c = static_cast<int32_t>((i + 1) * w + j);
      int32_t d = static_cast<int32_t>((i + 1) * w + j + 1);
      mesh.triangles.at2(t, 0) = a;
      mesh.triangles.at2(t, 1) = b;
      mesh.triangles.at2(t, 2) = c;
      ++t;
      mesh.triangles.at2(t, 0) = b;
      mesh.triangles.at2(t, 1) = d;
      mesh.triangles.at2(t, 2) = c;
      ++t;
    }
  return mesh;
}

// Per-pixel unit normal n ~ (-dz/dx, -dz/dy, 1) with derivatives taken in
// the [-1,1] grid coordinates (central differences, one-sided at borders).
// n_z > 0 everywhere by construction.
template <class T>
TensorT<T> compute_normals(const TensorT<T>& depth) {
  detail::check_finite_depth(depth);
  int64_t h = depth.dim(0), w = depth.dim(1);
  T inv_dx = static_cast<T>(w - 1) / T(2);
  T inv_dy = static_cast<T>(h - 1) / T(2);
  TensorT<T> n({3, h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      T zx, zy;
      if (j == 0)
        zx = (depth.at2(i, 1) - depth.at2(i, 0)) * inv_dx;
      else if (j == w - 1)
        zx = (depth.at2(i, w - 1) - depth.at2(i, w - 2)) * inv_dx;
      else
        zx = (depth.at2(i, j + 1) - depth.at2(i, j - 1)) * inv_dx * T(0.5);
      if (i == 0)
        zy = (depth.at2(1, j) - depth.at2(0, j)) * inv_dy;
      else if (i == h - 1)
        zy = (depth.at2(h - 1, j) - depth.at2(h - 2, j)) * inv_dy;
      else
        zy = (depth.at2(i + 1, j) - depth.at2(i - 1, j)) * inv_dy * T(0.5);
      T norm = std::sqrt(zx * zx + zy * zy + T(1));
      n.at3(0, i, j) = -zx / norm;
      n.at3(1, i, j) = -zy / norm;
      n.at3(2, i, j) = T(1) / norm;
    }
  return n;
}

// Diffuse shading, no specular term, no clamping of the output:
// out = albedo * (ka + kd * max(0, n.L)), L = normalize(lx, ly, 1).
// `lambert_out`, if given, receives the pre-clamp n.L values.
template <class T>
TensorT<T> shade(const TensorT<T>& albedo, const TensorT<T>& normals, const LightT<T>& light,
                 TensorT<T>* lambert_out = nullptr) {
  int64_t h = albedo.dim(1), w = albedo.dim(2);
  T ln = std::sqrt(light.lx * light.lx + light.ly * light.ly + T(1));
  T Lx = light.lx / ln, Ly = light.ly / ln, Lz = T(1) / ln;
  TensorT<T> out({3, h, w});
  if (lambert_out) *lambert_out = TensorT<T>({h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      T ndl = normals.at3(0, i, j) * Lx + normals.at3(1, i, j) * Ly + normals.at3(2, i, j) * Lz;
      if (lambert_out) lambert_out->at2(i, j) = ndl;
      T s = light.ka + light.kd * std::max(T(0), ndl);
      for (int c = 0; c < 3; ++c) out.at3(c, i, j) = albedo.at3(c, i, j) * s;
    }
  return out;
}

// World transform: the face pivots about its canonical center (0,0,1+z_offset)
// rather than the camera origin, so poses within the invariant ranges keep the
// face in frame. X = R*(x, y, z-1) + (0,0,1+z_offset) + t.
template <class T>
std::array<T, 3> transform_vertex(T x, T y, T z, const detail::Mat3<T>& rot, const PoseT<T>& pose,
                                  const Camera& cam) {
  auto r = rot.apply(x, y, z - T(1));
  return {r[0] + pose.tx, r[1] + pose.ty, r[2] + T(1) + static_cast<T>(cam.z_offset) + pose.tz};
}

// (u, v) = (f*X/Z, f*Y/Z)
template <class T>
std::array<T, 3> project_vertex(const std::array<T, 3>& p, const Camera& cam) {
  T f = static_cast<T>(cam.f);
  return {f * p[0] / p[2], f * p[1] / p[2], p[2]};
}

// Full forward pass, keeping everything the backward pass needs.
template <class T>
RenderContextT<T> render_forward(const TensorT<T>& albedo, const TensorT<T>& depth,
                                 const PoseT<T>& pose, const LightT<T>& light, const Camera& cam) {
  detail::check_finite_depth(depth);
  if (albedo.rank() != 3 || albedo.dim(0) != 3 || albedo.dim(1) != depth.dim(0) ||
      albedo.dim(2) != depth.dim(1))
    throw InvalidInputError("albedo must be 3 x H x W matching the depth map");

  RenderContextT<T> ctx;
  ctx.h = static_cast<int>(depth.dim(0));
  ctx.w = static_cast<int>(depth.dim(1));
  ctx.cam = cam;
  ctx.pose = pose;
  ctx.light = light;
  ctx.albedo = albedo;
  ctx.depth = depth;
  ctx.normals = compute_normals(depth);
  ctx.shaded = shade(albedo, ctx.normals, light, &ctx.lambert);

  const int64_t h = ctx.h, w = ctx.w;
  detail::PoseRotation<T> rot(pose);
  MeshT<T> mesh = build_grid_mesh(depth);
  ctx.tris = mesh.triangles;

  ctx.screen = TensorT<T>({h * w, 3});
  for (int64_t v = 0; v < h * w; ++v) {
    auto p = transform_vertex(mesh.vertices.at2(v, 0), mesh.vertices.at2(v, 1),
                              mesh.vertices.at2(v, 2), rot.r, pose, cam);
    if (!(p[2] > T(0))) throw DegeneratePoseError("pose places a vertex at Z <= 0");
    auto s = project_vertex(p, cam);
    ctx.screen.at2(v, 0) = s[0];
    ctx.screen.at2(v, 1) = s[1];
    ctx.screen.at2(v, 2) = s[2];
  }

  ctx.out.image = TensorT<T>({3, h, w});
  ctx.out.mask = TensorT<uint8_t>({h, w});
  ctx.tri = TensorT<int32_t>::full({h, w}, -1);
  ctx.bary = TensorT<T>({h, w, 3});
  TensorT<T> zbuf = TensorT<T>::full({h, w}, std::numeric_limits<T>::infinity());

  const int64_t ntri = ctx.tris.dim(0);
  for (int64_t t = 0; t < ntri; ++t) {
    int32_t ia = ctx.tris.at2(t, 0), ib = ctx.tris.at2(t, 1), ic = ctx.tris.at2(t, 2);
    T au = ctx.screen.at2(ia, 0), av = ctx.screen.at2(ia, 1);
    T bu = ctx.screen.at2(ib, 0), bv = ctx.screen.at2(ib, 1);
    T cu = ctx.screen.at2(ic, 0), cv = ctx.screen.at2(ic, 1);
    T area = detail::area2(au, av, bu, bv, cu, cv);
    if (area == T(0)) continue;

    // pixel-index bounding box; pixel centers sit on the same [-1,1] grid
    T umin = std::min({au, bu, cu}), umax = std::max({au, bu, cu});
    T vmin = std::min({av, bv, cv}), vmax = std::max({av, bv, cv});
    int64_t j0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil((umin + 1) * (w - 1) / 2)));
    int64_t j1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::floor((umax + 1) * (w - 1) / 2)));
    int64_t i0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil((vmin + 1) * (h - 1) / 2)));
    int64_t i1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::floor((vmax + 1) * (h - 1) / 2)));

    for (int64_t i = i0; i <= i1; ++i) {
      T pv = detail::grid_coord<T>(i, h);
      for (int64_t j = j0; j <= j1; ++j) {
        T pu = detail::grid_coord<T>(j, w);
        T na = detail::area2(pu, pv, bu, bv, cu, cv);
        T nb = detail::area2(pu, pv, cu, cv, au, av);
        T nc = detail::area2(pu, pv, au, av, bu, bv);
        T wa = na / area, wb = nb / area, wc = nc / area;
        if (wa < T(0) || wb < T(0) || wc < T(0)) continue;
        T z = wa * ctx.screen.at2(ia, 2) + wb * ctx.screen.at2(ib, 2) + wc * ctx.screen.at2(ic, 2);
        if (z >= zbuf.at2(i, j)) continue;
        zbuf.at2(i, j) = z;
        ctx.tri.at2(i, j) = static_cast<int32_t>(t);
        ctx.bary.at3(i, j, 0) = wa;
        ctx.bary.at3(i, j, 1) = wb;
        ctx.bary.at3(i, j, 2) = wc;
        ctx.out.mask.at2(i, j) = 1;
        for (int c = 0; c < 3; ++c) {
          int64_t ra = ia / w, ca = ia % w, rb = ib / w, cb = ib % w, rc = ic / w, cc = ic % w;
          ctx.out.image.at3(c, i, j) = wa * ctx.shaded.at3(c, ra, ca) +
                                       wb * ctx.shaded.at3(c, rb, cb) +
                                       wc * ctx.shaded.at3(c, rc, cc);
        }
      }
    }
  }
  return ctx;
}

// Backward pass for d(loss)/d(image). Visibility (triangle assignment and
// mask) is held fixed; gradients flow through per-vertex shading and the
// barycentric weights of the winning triangle.
// `sabotage_shading_grad` flips the sign of the shading-path gradient; it
// exists so the gradient-check suite can prove it detects a planted bug.
template <class T>
RenderGradsT<T> render_backward(const RenderContextT<T>& ctx, const TensorT<T>& d_image,
                                bool sabotage_shading_grad = false) {
  const int64_t h = ctx.h, w = ctx.w;
  RenderGradsT<T> g;
  g.d_albedo = TensorT<T>({3, h, w});
  g.d_depth = TensorT<T>({h, w});

  TensorT<T> d_shaded({3, h, w});
  TensorT<T> d_screen({h * w, 2});  // d(u), d(v) per vertex

  detail::PoseRotation<T> rot(ctx.pose);
  const T f = static_cast<T>(ctx.cam.f);

  // rasterization: scatter pixel gradients to vertex colors and positions
  for (int64_t i = 0; i < h; ++i) {
    T pv = detail::grid_coord<T>(i, h);
    for (int64_t j = 0; j < w; ++j) {
      int32_t t = ctx.tri.at2(i, j);
      if (t < 0) continue;
      T pu = detail::grid_coord<T>(j, w);
      int32_t idx[3] = {ctx.tris.at2(t, 0), ctx.tris.at2(t, 1), ctx.tris.at2(t, 2)};
      T u[3], v[3];
      for (int k = 0; k < 3; ++k) {
        u[k] = ctx.screen.at2(idx[k], 0);
        v[k] = ctx.screen.at2(idx[k], 1);
      }
      T area = detail::area2(u[0], v[0], u[1], v[1], u[2], v[2]);
      T wgt[3] = {ctx.bary.at3(i, j, 0), ctx.bary.at3(i, j, 1), ctx.bary.at3(i, j, 2)};

      // color path: dO/d(color_k) = w_k
      T dw[3] = {0, 0, 0};
      for (int c = 0; c < 3; ++c) {
        T dpix = d_image.at3(c, i, j);
        if (dpix == T(0)) continue;
        for (int k = 0; k < 3; ++k) {
          int64_t rk = idx[k] / w, ck = idx[k] % w;
          d_shaded.at3(c, rk, ck) += dpix * wgt[k];
          dw[k] += dpix * ctx.shaded.at3(c, rk, ck);
        }
      }
      if (dw[0] == T(0) && dw[1] == T(0) && dw[2] == T(0)) continue;

      // barycentric path: w_k = N_k / T with N_a = A(p,b,c), N_b = A(p,c,a),
      // N_c = A(p,a,b), T = A(a,b,c) = N_a + N_b + N_c.
      // dA(p,q,r)/dq = (r.v - p.v, -(r.u - p.u)), dA/dr = (-(q.v - p.v), q.u - p.u).
      auto d_area_q = [&](T qu_, T qv_, T ru_, T rv_, T& dqu, T& dqv) {
        (void)qu_;
        (void)qv_;
        dqu = rv_ - pv;
        dqv = -(ru_ - pu);
      };
      auto d_area_r = [&](T qu_, T qv_, T ru_, T rv_, T& dru, T& drv) {
        (void)ru_;
        (void)rv_;
        dru = -(qv_ - pv);
        drv = qu_ - pu;
      };
      // dN[k][m][0..1]: derivative of N_k w.r.t. vertex m's (u,v)
      T dN[3][3][2] = {};
      // N_a = A(p, b, c): vertices b=1, c=2
      d_area_q(u[1], v[1], u[2], v[2], dN[0][1][0], dN[0][1][1]);
      d_area_r(u[1], v[1], u[2], v[2], dN[0][2][0], dN[0][2][1]);
      // N_b = A(p, c, a): vertices c=2, a=0
      d_area_q(u[2], v[2], u[0], v[0], dN[1][2][0], dN[1][2][1]);
      d_area_r(u[2], v[2], u[0], v[0], dN[1][0][0], dN[1][0][1]);
      // N_c = A(p, a, b): vertices a=0, b=1
      d_area_q(u[0], v[0], u[1], v[1], dN[2][0][0], dN[2][0][1]);
      d_area_r(u[0], v[0], u[1], v[1], dN[2][1][0], dN[2][1][1]);

      for (int m = 0; m < 3; ++m) {
        for (int d = 0; d < 2; ++d) {
          T dT = dN[0][m][d] + dN[1][m][d] + dN[2][m][d];
          T acc = 0;
          for (int k = 0; k < 3; ++k) acc += dw[k] * (dN[k][m][d] - wgt[k] * dT) / area;
          d_screen.at2(idx[m], d) += acc;
        }
      }
    }
  }

  // projection and world transform: d(u,v) -> dX -> pose, depth
  for (int64_t vi = 0; vi < h * w; ++vi) {
    T du = d_screen.at2(vi, 0), dv = d_screen.at2(vi, 1);
    if (du == T(0) && dv == T(0)) continue;
    T X = ctx.screen.at2(vi, 0) * ctx.screen.at2(vi, 2) / f;  // recover camera coords
    T Y = ctx.screen.at2(vi, 1) * ctx.screen.at2(vi, 2) / f;
    T Z = ctx.screen.at2(vi, 2);
    T dX = du * f / Z;
    T dY = dv * f / Z;
    T dZ = -(du * X + dv * Y) * f / (Z * Z);

    g.d_pose[3] += dX;
    g.d_pose[4] += dY;
    g.d_pose[5] += dZ;

    int64_t r = vi / w, c = vi % w;
    T lx = detail::grid_coord<T>(c, w);
    T ly = detail::grid_coord<T>(r, h);
    T lz = ctx.depth.at2(r, c) - T(1);
    auto dyaw = rot.d_yaw.apply(lx, ly, lz);
    auto dpitch = rot.d_pitch.apply(lx, ly, lz);
    auto droll = rot.d_roll.apply(lx, ly, lz);
    g.d_pose[0] += dX * dyaw[0] + dY * dyaw[1] + dZ * dyaw[2];
    g.d_pose[1] += dX * dpitch[0] + dY * dpitch[1] + dZ * dpitch[2];
    g.d_pose[2] += dX * droll[0] + dY * droll[1] + dZ * droll[2];

    // local position depends on depth only through its z component
    auto back = rot.r.apply_transposed(dX, dY, dZ);
    g.d_depth.at2(r, c) += back[2];
  }

  // shading: out = albedo * (ka + kd * max(0, n.L))
  T ln = std::sqrt(ctx.light.lx * ctx.light.lx + ctx.light.ly * ctx.light.ly + T(1));
  T Lx = ctx.light.lx / ln, Ly = ctx.light.ly / ln, Lz = T(1) / ln;
  TensorT<T> d_normals({3, h, w});
  T dLx = 0, dLy = 0, dLz = 0;
  T shade_sign = sabotage_shading_grad ? T(-1) : T(1);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      T ndl = ctx.lambert.at2(i, j);
      T s = ctx.light.ka + ctx.light.kd * std::max(T(0), ndl);
      T ds = 0;
      for (int c = 0; c < 3; ++c) {
        T dpix = shade_sign * d_shaded.at3(c, i, j);
        g.d_albedo.at3(c, i, j) += dpix * s;
        ds += dpix * ctx.albedo.at3(c, i, j);
      }
      if (ds == T(0)) continue;
      g.d_light[0] += ds;
      g.d_light[1] += ds * std::max(T(0), ndl);
      if (ndl > T(0)) {
        T dndl = ds * ctx.light.kd;
        d_normals.at3(0, i, j) += dndl * Lx;
        d_normals.at3(1, i, j) += dndl * Ly;
        d_normals.at3(2, i, j) += dndl * Lz;
        dLx += dndl * ctx.normals.at3(0, i, j);
        dLy += dndl * ctx.normals.at3(1, i, j);
        dLz += dndl * ctx.normals.at3(2, i, j);
      }
    }

  // light direction: L = g/|g|, g = (lx, ly, 1)
  {
    T gx = ctx.light.lx, gy = ctx.light.ly, gz = T(1);
    T dot = dLx * gx + dLy * gy + dLz * gz;
    T inv = T(1) / ln;
    g.d_light[2] = (dLx - dot * gx / (ln * ln)) * inv;
    g.d_light[3] = (dLy - dot * gy / (ln * ln)) * inv;
  }

  // normals: n = m/|m| with m = (-zx, -zy, 1); scatter the finite-difference
  // stencils back onto the depth grid
  T inv_dx = static_cast<T>(w - 1) / T(2);
  T inv_dy = static_cast<T>(h - 1) / T(2);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      T dnx = d_normals.at3(0, i, j), dny = d_normals.at3(1, i, j), dnz = d_normals.at3(2, i, j);
      if (dnx == T(0) && dny == T(0) && dnz == T(0)) continue;
      T nx = ctx.normals.at3(0, i, j), ny = ctx.normals.at3(1, i, j), nz = ctx.normals.at3(2, i, j);
      // |m| = 1/nz, m = n/nz
      T dot = dnx * nx + dny * ny + dnz * nz;
      T dmx = (dnx - dot * nx) * nz;
      T dmy = (dny - dot * ny) * nz;
      T dzx = -dmx, dzy = -dmy;
      if (j == 0) {
        g.d_depth.at2(i, 1) += dzx * inv_dx;
        g.d_depth.at2(i, 0) -= dzx * inv_dx;
      } else if (j == w - 1) {
        g.d_depth.at2(i, w - 1) += dzx * inv_dx;
        g.d_depth.at2(i, w - 2) -= dzx * inv_dx;
      } else {
        g.d_depth.at2(i, j + 1) += dzx * inv_dx * T(0.5);
        g.d_depth.at2(i, j - 1) -= dzx * inv_dx * T(0.5);
      }
      if (i == 0) {
        g.d_depth.at2(1, j) += dzy * inv_dy;
        g.d_depth.at2(0, j) -= dzy * inv_dy;
      } else if (i == h - 1) {
        g.d_depth.at2(h - 1, j) += dzy * inv_dy;
        g.d_depth.at2(h - 2, j) -= dzy * inv_dy;
      } else {
        g.d_depth.at2(i + 1, j) += dzy * inv_dy * T(0.5);
        g.d_depth.at2(i - 1, j) -= dzy * inv_dy * T(0.5);
      }
    }

  return g;
}

// I_hat = R(M_t, M_s, Z_p, Z_l)
template <class T>
RenderOutputT<T> render(const TensorT<T>& albedo, const TensorT<T>& depth, const PoseT<T>& pose,
                        const LightT<T>& light, const Camera& cam) {
  return render_forward(albedo, depth, pose, light, cam).out;
}

// I_hat' = R(flip(M_t), flip(M_s), Z_p, Z_l)
template <class T>
RenderOutputT<T> render_flipped(const TensorT<T>& albedo, const TensorT<T>& depth,
                                const PoseT<T>& pose, const LightT<T>& light, const Camera& cam) {
  return render(hflip(albedo), hflip(depth), pose, light, cam);
}

// canonical view: identity pose, fixed neutral light
template <class T>
RenderOutputT<T> frontalize(const TensorT<T>& albedo, const TensorT<T>& depth, const Camera& cam) {
  return render(albedo, depth, PoseT<T>::identity(), LightT<T>::neutral(), cam);
}

}  // namespace lf::render
