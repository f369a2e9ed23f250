#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "macp/bytes.hpp"
#include "macp/geom.hpp"
#include "support.hpp"

using namespace macp;

TEST_CASE("normalize_angle wraps into (-pi, pi]") {
  CHECK(normalize_angle(kPi) == doctest::Approx(kPi));
  CHECK(normalize_angle(-kPi) == doctest::Approx(kPi));
  CHECK(normalize_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
  CHECK(normalize_angle(0.25) == 0.25);
}

TEST_CASE("transform_points") {
  PointCloud cloud;
  cloud.points = {{1.0, 0.0, 0.7, 0.4}, {-3.0, 2.5, 1.1, 0.9}};

  SUBCASE("same pose is the identity") {
    const Pose2D p = Pose2D::of(3.0, -2.0, 0.7);
    PointCloud out = transform_points(cloud, p, p);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      CHECK(out.points[i].x == doctest::Approx(cloud.points[i].x).epsilon(1e-12));
      CHECK(out.points[i].y == doctest::Approx(cloud.points[i].y).epsilon(1e-12));
    }
  }

  SUBCASE("half turn maps (1,0) to (-1,0)") {
    PointCloud one;
    one.points = {{1.0, 0.0, 0.5, 0.5}};
    PointCloud out = transform_points(one, Pose2D{}, Pose2D::of(0, 0, kPi));
    CHECK(std::abs(out.points[0].x + 1.0) < 1e-9);
    CHECK(std::abs(out.points[0].y) < 1e-9);
    CHECK(out.points[0].z == 0.5);
    CHECK(out.points[0].intensity == 0.5);
  }

  SUBCASE("round trip through the inverse transform and distance preservation") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> pos(-50, 50), ang(-kPi, kPi);
    for (int trial = 0; trial < 50; ++trial) {
      PointCloud c = testing::random_cloud(rng, 64, -40, 40);
      const Pose2D a = Pose2D::of(pos(rng), pos(rng), ang(rng));
      const Pose2D b = Pose2D::of(pos(rng), pos(rng), ang(rng));
      PointCloud there = transform_points(c, a, b);
      PointCloud back = transform_points(there, b, a);
      double err = 0;
      for (std::size_t i = 0; i < c.size(); ++i)
        err = std::max(err, std::hypot(back.points[i].x - c.points[i].x, back.points[i].y - c.points[i].y));
      CHECK(err < 1e-9);
      for (std::size_t i = 1; i < c.size(); ++i) {
        const double d0 = std::hypot(c.points[i].x - c.points[0].x, c.points[i].y - c.points[0].y);
        const double d1 = std::hypot(there.points[i].x - there.points[0].x, there.points[i].y - there.points[0].y);
        CHECK(std::abs(d0 - d1) < 1e-9);
      }
    }
  }
}

TEST_CASE("voxelize") {
  SUBCASE("floor arithmetic") {
    VoxelConfig cfg;
    cfg.origin_x = 0;
    cfg.origin_y = 0;
    cfg.cell_x = 0.2;
    cfg.cell_y = 0.075;
    PointCloud c;
    c.points = {{0.1, 0.03, 1.0, 0.5}};
    SparseTensor st = voxelize(c, cfg);
    REQUIRE(st.size() == 1);
    CHECK(st.layout->coords()[0] == Cell{0, 0});
  }

  SUBCASE("two points in one cell") {
    VoxelConfig cfg;
    PointCloud c;
    c.points = {{0.1, 0.1, 1.0, 0.2}, {0.2, 0.3, 1.0, 0.6}};
    SparseTensor st = voxelize(c, cfg);
    REQUIRE(st.size() == 1);
    CHECK(st.feats[0] == doctest::Approx(2.0 / 16.0));
    CHECK(st.feats[1] == doctest::Approx(0.4));
  }

  SUBCASE("count feature saturates at one") {
    VoxelConfig cfg;
    PointCloud c;
    for (int i = 0; i < 40; ++i) c.points.push_back({0.1, 0.1, 1.0, 1.0});
    CHECK(voxelize(c, cfg).feats[0] == 1.0);
  }

  SUBCASE("half-open cells drop points on the max boundary") {
    VoxelConfig cfg;
    PointCloud c;
    c.points = {{32.0, 0.0, 1.0, 0.5}, {0.0, 32.0, 1.0, 0.5}, {-32.0, -32.0, 1.0, 0.5}};
    SparseTensor st = voxelize(c, cfg);
    REQUIRE(st.size() == 1);
    CHECK(st.layout->coords()[0] == Cell{0, 0});
  }

  SUBCASE("empty cloud") { CHECK(voxelize(PointCloud{}, VoxelConfig{}).size() == 0); }

  SUBCASE("occupied set equals brute-force binning") {
    std::mt19937_64 rng(11);
    VoxelConfig cfg;
    PointCloud c = testing::random_cloud(rng, 1000, -40, 40);
    std::set<std::pair<int, int>> oracle;
    for (const Point& p : c.points) {
      for (int r = 0; r < cfg.rows; ++r) {
        const double x0 = cfg.origin_x + r * cfg.cell_x;
        if (!(p.x >= x0 && p.x < x0 + cfg.cell_x)) continue;
        for (int col = 0; col < cfg.cols; ++col) {
          const double y0 = cfg.origin_y + col * cfg.cell_y;
          if (p.y >= y0 && p.y < y0 + cfg.cell_y) oracle.insert({r, col});
        }
      }
    }
    SparseTensor st = voxelize(c, cfg);
    std::set<std::pair<int, int>> got;
    for (Cell cell : st.layout->coords()) got.insert({cell.row, cell.col});
    CHECK(got == oracle);

    // voxelize -> to_dense: nonzero cells equal the binning oracle.
    DenseGrid g = to_dense(st, cfg);
    std::set<std::pair<int, int>> nonzero;
    for (int r = 0; r < g.rows; ++r)
      for (int col = 0; col < g.cols; ++col)
        if (g.at(r, col, 0) != 0.0) nonzero.insert({r, col});
    CHECK(nonzero == oracle);

    // Index lookup agrees with a linear scan.
    const auto& coords = st.layout->coords();
    for (std::size_t i = 0; i < coords.size(); ++i) {
      auto it = std::find(coords.begin(), coords.end(), coords[i]);
      CHECK(st.layout->find(coords[i]) == static_cast<int>(it - coords.begin()));
    }
    CHECK(st.layout->find({-5, 3}) == -1);
  }
}

TEST_CASE("SparseLayout rejects duplicates") {
  CHECK_THROWS_AS(SparseLayout({{1, 1}, {2, 2}, {1, 1}}), Error);
}

TEST_CASE("to_dense") {
  VoxelConfig cfg;
  cfg.rows = 6;
  cfg.cols = 5;
  SUBCASE("empty") {
    DenseGrid g = to_dense(SparseTensor(std::make_shared<SparseLayout>(std::vector<Cell>{}), {}, 2), cfg);
    CHECK(std::all_of(g.values.begin(), g.values.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("one site") {
    SparseTensor st(std::make_shared<SparseLayout>(std::vector<Cell>{{2, 3}}), {1.0, 5.0}, 2);
    DenseGrid g = to_dense(st, cfg);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 5; ++c) {
        const bool site = r == 2 && c == 3;
        CHECK(g.at(r, c, 0) == (site ? 1.0 : 0.0));
        CHECK(g.at(r, c, 1) == (site ? 5.0 : 0.0));
      }
  }
  SUBCASE("out of bounds") {
    SparseTensor st(std::make_shared<SparseLayout>(std::vector<Cell>{{6, 0}}), {1.0, 5.0}, 2);
    CHECK_THROWS_AS(to_dense(st, cfg), OutOfBounds);
  }
  SUBCASE("mass conservation") {
    std::mt19937_64 rng(3);
    auto layout = testing::random_layout(rng, 6, 5, 0.4);
    SparseTensor st(layout, testing::uniform(rng, layout->size() * 3), 3);
    DenseGrid g = to_dense(st, cfg);
    double a = 0, b = 0;
    for (double v : st.feats) a += v;
    for (double v : g.values) b += v;
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("point cloud file round trip") {
  std::mt19937_64 rng(5);
  PointCloud c = testing::random_cloud(rng, 100, -30, 30);
  auto bytes = encode_point_cloud(c);
  CHECK(bytes.size() == 8 + 16 * 100);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "MACPPC01");
  PointCloud back = decode_point_cloud(bytes);
  REQUIRE(back.size() == c.size());
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(back.points[i].x == static_cast<float>(c.points[i].x));

  const auto path = std::filesystem::temp_directory_path() / "macp_test_cloud.bin";
  write_point_cloud(path, back);
  PointCloud again = read_point_cloud(path);
  CHECK(again.points[7].intensity == back.points[7].intensity);
  std::filesystem::remove(path);

  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_point_cloud(bytes), Error);
  bytes[0] = 'M';
  bytes.pop_back();
  CHECK_THROWS_AS(decode_point_cloud(bytes), bytes::Truncated);
}
