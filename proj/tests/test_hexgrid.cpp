#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "alcofm/hexgrid.hpp"

using namespace alcofm;

namespace {

const HexGeometry kGeom{2604.0, 40.0, -74.0};

// Exhaustive nearest-centroid scan with the (q, r) tie rule.
std::pair<int, int> brute_nearest(PlanePoint p, const HexGeometry& g) {
  std::pair<int, int> best{0, 0};
  double bd = INFINITY;
  for (int q = -30; q <= 30; ++q)
    for (int r = -30; r <= 30; ++r) {
      const double cx = g.edge_m * std::sqrt(3.0) * (q + r / 2.0);
      const double cy = g.edge_m * 1.5 * r;
      const double d = (cx - p.x) * (cx - p.x) + (cy - p.y) * (cy - p.y);
      if (d < bd) {
        bd = d;
        best = {q, r};
      }
    }
  return best;
}

}  // namespace

TEST(CellOf, AnchorAndUnitStep) {
  EXPECT_EQ(cell_of(40.0, -74.0, kGeom, "nyc"), (CellIndex{0, 0, "nyc"}));
  const double rad = M_PI / 180.0;
  const double dlon = kGeom.center_spacing_m() / (kEarthRadiusM * rad * std::cos(40.0 * rad));
  EXPECT_EQ(cell_of(40.0, -74.0 + dlon, kGeom, "nyc"), (CellIndex{1, 0, "nyc"}));
}

TEST(CellOf, MatchesExhaustiveScan) {
  CounterRng rng(3, 1);
  // A 10 x 10-cell box centered on the anchor (stays inside the projection window).
  const PlanePoint lo = cell_center(-5, -5, kGeom), hi = cell_center(5, 5, kGeom);
  for (int i = 0; i < 50; ++i) {
    PlanePoint p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y)};
    const auto [lat, lon] = unproject(p, kGeom);
    const CellIndex c = cell_of(lat, lon, kGeom, "x");
    const auto [bq, br] = brute_nearest(project(lat, lon, kGeom), kGeom);
    EXPECT_EQ(c.q, bq);
    EXPECT_EQ(c.r, br);
  }
}

TEST(CellOf, CentroidRoundTripAndWindow) {
  for (int q = -6; q <= 6; ++q)
    for (int r = -6; r <= 6; ++r) {
      const auto [lat, lon] = centroid_latlon({q, r, "a"}, kGeom);
      EXPECT_EQ(cell_of(lat, lon, kGeom, "a"), (CellIndex{q, r, "a"}));
    }
  EXPECT_THROW(cell_of(40.6, -74.0, kGeom, "a"), std::out_of_range);
  EXPECT_THROW(cell_of(40.0, -73.4, kGeom, "a"), std::out_of_range);
}

TEST(CellOf, BoundaryTiePicksSmallestAxial) {
  // Midpoint of centers (0,0) and (1,0) is equidistant from both.
  const PlanePoint mid{kGeom.center_spacing_m() / 2.0, 0.0};
  EXPECT_EQ(nearest_cell(mid, kGeom), (std::pair<int, int>{0, 0}));
}

TEST(HexGeometry, AreaOfRegularHexagon) {
  EXPECT_NEAR(kGeom.cell_area_km2(), 3.0 * std::sqrt(3.0) / 2.0 * 2.604 * 2.604, 1e-12);
  EXPECT_NEAR(kGeom.cell_area_km2(), 17.6, 0.02 * 17.6);
  EXPECT_THROW((HexGeometry{0.0, 0, 0}.validate()), ValidationError);
}

TEST(Neighbors, FixedStencilOrder) {
  std::vector<CellIndex> want{{1, 0, "r"}, {1, -1, "r"}, {0, -1, "r"}, {-1, 0, "r"}, {-1, 1, "r"}, {0, 1, "r"}};
  EXPECT_EQ(neighbors({0, 0, "r"}), want);
  std::vector<CellIndex> want2{{3, -1, "r"}, {3, -2, "r"}, {2, -2, "r"}, {1, -1, "r"}, {1, 0, "r"}, {2, 0, "r"}};
  EXPECT_EQ(neighbors({2, -1, "r"}), want2);
}

TEST(Neighbors, TwoStepsReproduceRingTwo) {
  for (const auto& c : hex_patch(-2, -2, 5, 5, "r")) {
    std::set<CellIndex> reach;
    for (const auto& n : neighbors(c))
      for (const auto& m : neighbors(n))
        if (hex_distance(m, c) == 2) reach.insert(m);
    std::set<CellIndex> ring;
    for (int q = c.q - 3; q <= c.q + 3; ++q)
      for (int r = c.r - 3; r <= c.r + 3; ++r) {
        const int dq = q - c.q, dr = r - c.r;
        if (std::max({std::abs(dq), std::abs(dr), std::abs(dq + dr)}) == 2) ring.insert({q, r, "r"});
      }
    EXPECT_EQ(reach, ring);
    EXPECT_EQ(ring.size(), 12u);
  }
}

TEST(Topology, SmallCases) {
  auto one = build_topology({{0, 0, "a"}});
  EXPECT_EQ(one.size(), 1u);
  EXPECT_TRUE(one.adjacent(0).empty());

  auto two = build_topology({{1, 0, "a"}, {0, 0, "a"}});
  EXPECT_EQ(two.cells()[0], (CellIndex{0, 0, "a"}));
  EXPECT_EQ(two.adjacent(0), std::vector<std::size_t>{1});
  EXPECT_EQ(two.adjacent(1), std::vector<std::size_t>{0});

  std::vector<CellIndex> flower{{0, 0, "a"}};
  for (const auto& n : neighbors({0, 0, "a"})) flower.push_back(n);
  auto t = build_topology(flower);
  EXPECT_EQ(t.adjacency({0, 0, "a"}).size(), 6u);
  for (const auto& n : neighbors({0, 0, "a"})) EXPECT_EQ(t.adjacency(n).size(), 3u);
}

TEST(Topology, DuplicatesRejected) {
  EXPECT_THROW(build_topology({{0, 0, "a"}, {0, 0, "a"}}), ValidationError);
  EXPECT_THROW(build_topology({}), ValidationError);
}

TEST(Topology, SymmetryDegreeBijectionDeterminism) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(seed, 2);
    std::vector<CellIndex> cells;
    for (const auto& c : hex_patch(0, 0, 8, 8, seed % 2 ? "a" : "b"))
      if (rng.uniform() < 0.6) cells.push_back(c);
    for (const auto& c : hex_patch(0, 0, 3, 3, "z"))
      if (rng.uniform() < 0.6) cells.push_back(c);
    if (cells.empty()) continue;
    auto t = build_topology(cells);
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_EQ(t.node_index(t.cells()[i]), i);
      EXPECT_LE(t.adjacent(i).size(), 6u);
      for (auto j : t.adjacent(i)) {
        const auto& back = t.adjacent(j);
        EXPECT_NE(std::find(back.begin(), back.end(), i), back.end());
        EXPECT_EQ(t.cells()[i].region_id, t.cells()[j].region_id);
      }
    }
    auto t2 = build_topology(cells);
    EXPECT_EQ(t.cells(), t2.cells());
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t.adjacent(i), t2.adjacent(i));
  }
}

TEST(Topology, InteriorCellsHaveSixNeighbors) {
  auto t = build_topology(hex_patch(0, 0, 5, 5, "a"));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& c = t.cells()[i];
    const bool interior = c.q > 0 && c.q < 4 && c.r > 0 && c.r < 4;
    if (interior) {
      EXPECT_EQ(t.adjacent(i).size(), 6u);
    }
  }
  EXPECT_EQ(t.regions(), std::vector<std::string>{"a"});
  EXPECT_EQ(t.region("a").size(), 25u);
}

TEST(CellIndexText, RoundTrip) {
  CellIndex c{-3, 12, "city:one"};
  EXPECT_EQ(c.to_string(), "city:one:-3:12");
  EXPECT_EQ(CellIndex::parse(c.to_string()), c);
  EXPECT_THROW(CellIndex::parse("nope"), ValidationError);
  EXPECT_THROW(CellIndex::parse("a:1:x"), ValidationError);
}
