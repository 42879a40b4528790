#include "treereg/synthetic.hpp"

#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace treereg {

namespace {

using Rng = std::mt19937_64;

Vec3 noise(Rng& rng, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  return {g(rng), g(rng), g(rng)};
}

void add_rect(std::vector<Vec3>& pts, Rng& rng, const Vec3& corner,
              const Vec3& edge_u, const Vec3& edge_v, std::size_t count,
              double sigma) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    pts.push_back(corner + u(rng) * edge_u + u(rng) * edge_v +
                  noise(rng, sigma));
  }
}

void add_sphere(std::vector<Vec3>& pts, Rng& rng, const Vec3& center,
                double radius, std::size_t count, double sigma) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    Vec3 dir(g(rng), g(rng), g(rng));
    const double norm = dir.norm();
    if (norm < 1e-12) {
      dir = Vec3(1, 0, 0);
    } else {
      dir /= norm;
    }
    pts.push_back(center + radius * dir + noise(rng, sigma));
  }
}

}  // namespace

PointCloud synthetic_blobs(std::size_t n, double sigma, std::uint64_t seed) {
  if (n < 8) throw std::invalid_argument("synthetic_blobs: need n >= 8");
  PointCloud cloud;
  cloud.points.reserve(n);
  Rng rng(seed);
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 center(static_cast<double>(corner & 1),
                      static_cast<double>((corner >> 1) & 1),
                      static_cast<double>((corner >> 2) & 1));
    const std::size_t count = n / 8 + (static_cast<std::size_t>(corner) < n % 8);
    for (std::size_t i = 0; i < count; ++i) {
      cloud.points.push_back(center + noise(rng, sigma));
    }
  }
  return cloud;
}

PointCloud synthetic_plane(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synthetic_plane: need n >= 1");
  PointCloud cloud;
  cloud.points.reserve(n);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points.emplace_back(u(rng), u(rng), 0.0);
  }
  return cloud;
}

PointCloud synthetic_sphere(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synthetic_sphere: need n >= 1");
  PointCloud cloud;
  cloud.points.reserve(n);
  Rng rng(seed);
  add_sphere(cloud.points, rng, Vec3::Zero(), 1.0, n, 0.0);
  return cloud;
}

PointCloud synthetic_scene(std::size_t n, std::uint64_t seed) {
  if (n < 20) throw std::invalid_argument("synthetic_scene: need n >= 20");
  PointCloud cloud;
  cloud.points.reserve(n);
  Rng rng(seed);
  constexpr double kNoise = 0.002;

  const std::size_t n_wall_z = n * 18 / 100;
  const std::size_t n_wall_x = n * 14 / 100;
  const std::size_t n_box = n * 16 / 100;
  const std::size_t n_ball = n * 12 / 100;
  const std::size_t n_ramp = n * 12 / 100;
  const std::size_t n_floor = n - n_wall_z - n_wall_x - n_box - n_ball - n_ramp;

  // Floor and two walls.
  add_rect(cloud.points, rng, {0, 0, 0}, {2, 0, 0}, {0, 0, 1.5}, n_floor,
           kNoise);
  add_rect(cloud.points, rng, {0, 0, 0}, {2, 0, 0}, {0, 1, 0}, n_wall_z,
           kNoise);
  add_rect(cloud.points, rng, {0, 0, 0}, {0, 0, 1.5}, {0, 1, 0}, n_wall_x,
           kNoise);

  // Box: top plus four sides, split by area.
  {
    const Vec3 lo(1.2, 0.0, 0.9);
    const Vec3 dx(0.4, 0, 0), dy(0, 0.35, 0), dz(0, 0, 0.4);
    const double a_top = 0.4 * 0.4;
    const double a_x = 0.35 * 0.4;  // faces normal to x
    const double a_z = 0.4 * 0.35;  // faces normal to z
    const double total = a_top + 2 * a_x + 2 * a_z;
    const auto share = [&](double a) {
      return static_cast<std::size_t>(static_cast<double>(n_box) * a / total);
    };
    const std::size_t nx = share(a_x), nz = share(a_z);
    const std::size_t ntop = n_box - 2 * nx - 2 * nz;
    add_rect(cloud.points, rng, lo + dy, dx, dz, ntop, kNoise);
    add_rect(cloud.points, rng, lo, dy, dz, nx, kNoise);
    add_rect(cloud.points, rng, lo + dx, dy, dz, nx, kNoise);
    add_rect(cloud.points, rng, lo, dx, dy, nz, kNoise);
    add_rect(cloud.points, rng, lo + dz, dx, dy, nz, kNoise);
  }

  add_sphere(cloud.points, rng, {0.55, 0.3, 0.5}, 0.22, n_ball, kNoise);

  // Slanted panel with an oblique normal.
  add_rect(cloud.points, rng, {0.9, 0.0, 0.1}, {0.5, 0.0, 0.15},
           {0.0, 0.4, 0.3}, n_ramp, kNoise);
  return cloud;
}

PointCloud synthetic_lumpy(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synthetic_lumpy: need n >= 1");
  PointCloud cloud;
  cloud.points.reserve(n);
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  while (cloud.points.size() < n) {
    Vec3 dir(g(rng), g(rng), g(rng));
    const double norm = dir.norm();
    if (norm < 1e-12) continue;
    dir /= norm;
    const double theta = std::acos(std::clamp(dir.z(), -1.0, 1.0));
    const double phi = std::atan2(dir.y(), dir.x());
    // Low-order angular harmonics chosen so no two viewpoints look alike:
    // every patch is curved and the shape has no symmetry to alias against.
    const double radius =
        0.5 * (1.0 + 0.22 * std::sin(3.0 * theta) * std::sin(2.0 * phi) +
               0.18 * std::cos(2.0 * theta) * std::cos(3.0 * phi) +
               0.12 * std::sin(5.0 * phi) * std::sin(theta) +
               0.08 * std::cos(4.0 * theta));
    cloud.points.push_back(radius * dir + noise(rng, 0.002));
  }
  return cloud;
}

PointCloud synthetic_identical(std::size_t n, const Vec3& at) {
  if (n == 0) throw std::invalid_argument("synthetic_identical: need n >= 1");
  PointCloud cloud;
  cloud.points.assign(n, at);
  return cloud;
}

bool is_synthetic_uri(const std::string& text) {
  return text.rfind("synthetic:", 0) == 0;
}

PointCloud make_synthetic(const std::string& uri) {
  if (!is_synthetic_uri(uri)) {
    throw std::invalid_argument("not a synthetic cloud uri: " + uri);
  }
  std::vector<std::string> parts;
  std::istringstream ss(uri);
  std::string tok;
  while (std::getline(ss, tok, ':')) parts.push_back(tok);
  if (parts.size() != 4) {
    throw std::invalid_argument(
        "expected synthetic:<kind>:<n>:<seed>, got: " + uri);
  }
  std::size_t n = 0;
  std::uint64_t seed = 0;
  try {
    n = std::stoull(parts[2]);
    seed = std::stoull(parts[3]);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad count or seed in: " + uri);
  }
  PointCloud cloud;
  if (parts[1] == "blobs") {
    cloud = synthetic_blobs(n, 0.01, seed);
  } else if (parts[1] == "plane") {
    cloud = synthetic_plane(n, seed);
  } else if (parts[1] == "sphere") {
    cloud = synthetic_sphere(n, seed);
  } else if (parts[1] == "scene") {
    cloud = synthetic_scene(n, seed);
  } else if (parts[1] == "lumpy") {
    cloud = synthetic_lumpy(n, seed);
  } else if (parts[1] == "identical") {
    cloud = synthetic_identical(n, Vec3(1, 1, 1));
  } else {
    throw std::invalid_argument("unknown synthetic kind in: " + uri);
  }
  cloud.source_id = uri;
  return cloud;
}

}  // namespace treereg
