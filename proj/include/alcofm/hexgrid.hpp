#pragma once

// Hexagonal binning on a local tangent plane. Cells use axial (q, r)
// coordinates in a pointy-top layout, so the +q axis points east and a
// cell's six neighbors sit at 60 degree steps around it.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "alcofm/tensor.hpp"

namespace alcofm {

struct CellIndex {
  int q = 0;
  int r = 0;
  std::string region_id;

  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex& a, const CellIndex& b) {
    return std::tie(a.region_id, a.q, a.r) <=> std::tie(b.region_id, b.q, b.r);
  }

  /// Serialized as region_id:q:r.
  std::string to_string() const { return region_id + ":" + std::to_string(q) + ":" + std::to_string(r); }

  static CellIndex parse(const std::string& s) {
    const auto c2 = s.rfind(':');
    const auto c1 = c2 == std::string::npos || c2 == 0 ? std::string::npos : s.rfind(':', c2 - 1);
    if (c1 == std::string::npos) throw ValidationError("malformed cell string '" + s + "'");
    try {
      std::size_t used_q = 0, used_r = 0;
      const std::string qs = s.substr(c1 + 1, c2 - c1 - 1);
      const std::string rs = s.substr(c2 + 1);
      CellIndex c{std::stoi(qs, &used_q), std::stoi(rs, &used_r), s.substr(0, c1)};
      if (used_q != qs.size() || used_r != rs.size()) throw std::invalid_argument("trailing characters");
      return c;
    } catch (const std::logic_error&) {
      throw ValidationError("malformed cell string '" + s + "'");
    }
  }
};

struct HexGeometry {
  double edge_m = 2604.0;
  double origin_lat = 0.0;
  double origin_lon = 0.0;

  /// Area of a regular hexagon with this edge, in km^2.
  double cell_area_km2() const { return 1.5 * std::sqrt(3.0) * edge_m * edge_m * 1e-6; }

  /// Distance between adjacent cell centers.
  double center_spacing_m() const { return std::sqrt(3.0) * edge_m; }

  void validate() const {
    if (!(edge_m > 0.0)) throw ValidationError("hex edge length must be positive");
  }
};

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kProjectionWindowDeg = 0.5;

struct PlanePoint {
  double x = 0.0;  // east, meters
  double y = 0.0;  // north, meters
};

/// Equirectangular projection about the geometry's anchor.
inline PlanePoint project(double lat, double lon, const HexGeometry& geom) {
  if (std::abs(lat - geom.origin_lat) > kProjectionWindowDeg || std::abs(lon - geom.origin_lon) > kProjectionWindowDeg)
    throw std::out_of_range("point lies outside the +/-0.5 degree projection window");
  const double rad = M_PI / 180.0;
  return {kEarthRadiusM * (lon - geom.origin_lon) * rad * std::cos(geom.origin_lat * rad),
          kEarthRadiusM * (lat - geom.origin_lat) * rad};
}

inline std::pair<double, double> unproject(PlanePoint p, const HexGeometry& geom) {
  const double rad = M_PI / 180.0;
  return {geom.origin_lat + p.y / (kEarthRadiusM * rad),
          geom.origin_lon + p.x / (kEarthRadiusM * rad * std::cos(geom.origin_lat * rad))};
}

inline PlanePoint cell_center(int q, int r, const HexGeometry& geom) {
  return {geom.edge_m * std::sqrt(3.0) * (q + 0.5 * r), geom.edge_m * 1.5 * r};
}

/// (lat, lon) of a cell's centroid.
inline std::pair<double, double> centroid_latlon(const CellIndex& c, const HexGeometry& geom) {
  return unproject(cell_center(c.q, c.r, geom), geom);
}

/// Stencil order: +q, +q-r, -r, -q, -q+r, +r.
inline constexpr std::array<std::pair<int, int>, 6> kHexDirections{
    {{1, 0}, {1, -1}, {0, -1}, {-1, 0}, {-1, 1}, {0, 1}}};

inline std::vector<CellIndex> neighbors(const CellIndex& c) {
  std::vector<CellIndex> out;
  out.reserve(6);
  for (auto [dq, dr] : kHexDirections) out.push_back({c.q + dq, c.r + dr, c.region_id});
  return out;
}

inline int hex_distance(const CellIndex& a, const CellIndex& b) {
  const int dq = a.q - b.q, dr = a.r - b.r;
  return std::max({std::abs(dq), std::abs(dr), std::abs(dq + dr)});
}

/// Nearest cell center to a plane point; exact ties go to the smaller (q, r).
inline std::pair<int, int> nearest_cell(PlanePoint p, const HexGeometry& geom) {
  const double fq = (std::sqrt(3.0) / 3.0 * p.x - p.y / 3.0) / geom.edge_m;
  const double fr = (2.0 / 3.0 * p.y) / geom.edge_m;
  // Cube rounding lands on the nearest cell or one of its neighbors; scan
  // that stencil so the tie rule is applied exactly.
  const double fs = -fq - fr;
  int q = static_cast<int>(std::lround(fq)), r = static_cast<int>(std::lround(fr));
  const int s = static_cast<int>(std::lround(fs));
  const double dq = std::abs(q - fq), dr = std::abs(r - fr), ds = std::abs(s - fs);
  if (dq > dr && dq > ds) q = -r - s;
  else if (dr > ds) r = -q - s;

  std::pair<int, int> best{q, r};
  double best_d = std::numeric_limits<double>::infinity();
  for (int cq = q - 1; cq <= q + 1; ++cq) {
    for (int cr = r - 1; cr <= r + 1; ++cr) {
      const PlanePoint c = cell_center(cq, cr, geom);
      const double d = (c.x - p.x) * (c.x - p.x) + (c.y - p.y) * (c.y - p.y);
      if (d < best_d || (d == best_d && std::pair{cq, cr} < best)) {
        best_d = d;
        best = {cq, cr};
      }
    }
  }
  return best;
}

/// Cell whose centroid is nearest to (lat, lon). Throws std::out_of_range
/// outside the projection window.
inline CellIndex cell_of(double lat, double lon, const HexGeometry& geom, const std::string& region_id) {
  geom.validate();
  const auto [q, r] = nearest_cell(project(lat, lon, geom), geom);
  return {q, r, region_id};
}

/// Immutable node set with symmetric <=6-neighbor adjacency. Node order is
/// (region_id, q, r) lexicographic.
class GridTopology {
 public:
  GridTopology() = default;

  const std::vector<CellIndex>& cells() const { return cells_; }
  std::size_t size() const { return cells_.size(); }

  std::size_t node_index(const CellIndex& c) const {
    auto it = index_.find(c);
    if (it == index_.end()) throw ValidationError("cell " + c.to_string() + " not in topology");
    return it->second;
  }

  bool contains(const CellIndex& c) const { return index_.count(c) != 0; }

  /// Neighbor node indices of node i, in stencil order.
  const std::vector<std::size_t>& adjacent(std::size_t i) const { return adj_.at(i); }

  std::vector<CellIndex> adjacency(const CellIndex& c) const {
    std::vector<CellIndex> out;
    for (auto j : adj_.at(node_index(c))) out.push_back(cells_[j]);
    return out;
  }

  std::vector<std::string> regions() const {
    std::vector<std::string> out;
    for (const auto& c : cells_)
      if (out.empty() || out.back() != c.region_id) out.push_back(c.region_id);
    return out;
  }

  /// Topology restricted to one region (regions never share edges).
  GridTopology region(const std::string& region_id) const;

  friend GridTopology build_topology(const std::vector<CellIndex>& cells);

 private:
  std::vector<CellIndex> cells_;
  std::map<CellIndex, std::size_t> index_;
  std::vector<std::vector<std::size_t>> adj_;
};

/// Graph over the given cells: an edge joins two cells when both are present
/// and adjacent on the lattice. Cells of different regions are never adjacent.
inline GridTopology build_topology(const std::vector<CellIndex>& cells) {
  if (cells.empty()) throw ValidationError("topology needs at least one cell");
  GridTopology t;
  t.cells_ = cells;
  std::sort(t.cells_.begin(), t.cells_.end());
  if (std::adjacent_find(t.cells_.begin(), t.cells_.end()) != t.cells_.end())
    throw ValidationError("duplicate cell in topology");
  for (std::size_t i = 0; i < t.cells_.size(); ++i) t.index_.emplace(t.cells_[i], i);
  t.adj_.resize(t.cells_.size());
  for (std::size_t i = 0; i < t.cells_.size(); ++i) {
    for (const auto& n : neighbors(t.cells_[i])) {
      if (auto it = t.index_.find(n); it != t.index_.end()) t.adj_[i].push_back(it->second);
    }
  }
  return t;
}

inline GridTopology GridTopology::region(const std::string& region_id) const {
  std::vector<CellIndex> sub;
  for (const auto& c : cells_)
    if (c.region_id == region_id) sub.push_back(c);
  return build_topology(sub);
}

/// Cells of a rows x cols parallelogram patch starting at (q0, r0).
inline std::vector<CellIndex> hex_patch(int q0, int r0, int cols, int rows, const std::string& region_id) {
  std::vector<CellIndex> out;
  for (int r = r0; r < r0 + rows; ++r)
    for (int q = q0; q < q0 + cols; ++q) out.push_back({q, r, region_id});
  return out;
}

}  // namespace alcofm
