#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "groundnav/geo_mapping.hpp"
#include "groundnav/sim_env.hpp"

using namespace groundnav;

TEST_CASE("the optical axis lands on the image center") {
  const geo::Camera cam = geo::make_camera();
  CHECK(cam.fx == Catch::Approx(64.0 / std::tan(42.0 * M_PI / 180.0)).epsilon(1e-12));
  CHECK(cam.cx == 64.0);
  CHECK(cam.cy == 36.0);

  // a 15 degree down-tilt from 0.4 m puts the axis on the ground
  // 0.4 / tan(15 deg) ahead of the camera
  const double ahead = 0.4 / std::tan(15.0 * M_PI / 180.0);

  SECTION("facing +x") {
    const geo::CameraFrame f = geo::camera_frame({1.0, 1.0, 0.4, 0.0}, cam);
    const auto px = geo::project_point(f, cam, {1.0 + ahead, 1.0, 0.0});
    REQUIRE(px.has_value());
    CHECK(px->u == Catch::Approx(64.0).margin(1e-9));
    CHECK(px->v == Catch::Approx(36.0).margin(1e-9));
  }
  SECTION("facing +y") {
    const geo::CameraFrame f = geo::camera_frame({1.0, 1.0, 0.4, M_PI / 2}, cam);
    const auto px = geo::project_point(f, cam, {1.0, 1.0 + ahead, 0.0});
    REQUIRE(px.has_value());
    CHECK(px->u == Catch::Approx(64.0).margin(1e-9));
    CHECK(px->v == Catch::Approx(36.0).margin(1e-9));
  }
  SECTION("points behind the camera do not project") {
    const geo::CameraFrame f = geo::camera_frame({1.0, 1.0, 0.4, 0.0}, cam);
    CHECK_FALSE(geo::project_point(f, cam, {0.0, 1.0, 0.0}).has_value());
  }
}

TEST_CASE("pixel rays and point projection are inverses") {
  const geo::Camera cam = geo::make_camera();
  const geo::CameraFrame f = geo::camera_frame({2.0, 3.0, 0.4, 0.7}, cam);
  for (const auto [i, j] : {std::pair{20, 50}, {0, 0}, {127, 71}, {64, 36}}) {
    const geo::Vec3 dir = geo::pixel_ray(f, cam, i, j);
    const auto px = geo::project_point(f, cam, f.origin + 2.0 * dir);
    REQUIRE(px.has_value());
    CHECK(px->u == Catch::Approx(i + 0.5).margin(1e-9));
    CHECK(px->v == Catch::Approx(j + 0.5).margin(1e-9));
  }
}

TEST_CASE("frame bounds are inclusive of the image edges") {
  const geo::Camera cam = geo::make_camera();
  CHECK(geo::in_frame(cam, {0.0, 0.0, 1.0}));
  CHECK(geo::in_frame(cam, {128.0, 72.0, 1.0}));
  CHECK_FALSE(geo::in_frame(cam, {128.1, 10.0, 1.0}));
  CHECK_FALSE(geo::in_frame(cam, {-0.1, 10.0, 1.0}));
}

TEST_CASE("grid cell helpers tile the environment") {
  CHECK(geo::cell_size() == Catch::Approx(4.7 / 32).epsilon(1e-15));
  for (int k = 0; k < geo::kMapSize; ++k)
    CHECK(geo::cell_index(geo::cell_center(k)) == k);
  CHECK(geo::cell_index(-1.0) == 0);
  CHECK(geo::cell_index(10.0) == geo::kMapSize - 1);
  CHECK(geo::in_env(0.0, 0.0));
  CHECK(geo::in_env(4.7, 4.7));
  CHECK_FALSE(geo::in_env(4.71, 1.0));
  CHECK_FALSE(geo::in_env(1.0, -0.01));
}

TEST_CASE("mask projection validates dimensions and flags degenerate views") {
  const geo::Camera cam = geo::make_camera();
  GridF mask(cam.width, cam.height, 1.0f);

  CHECK_THROWS(geo::project_mask(GridF(4, 4), {1, 1, 0.4, 0}, cam));

  geo::Camera flat = cam;
  flat.pitch = 0.0;
  bool degenerate = false;
  const GridF out = geo::project_mask(mask, {1, 1, 0.0, 0}, flat, &degenerate);
  CHECK(degenerate);
  for (double v : out.cells) CHECK(v == 0.0);

  // height alone, or pitch alone, still sees the ground
  bool deg2 = true;
  geo::project_mask(mask, {1, 1, 0.4, 0}, flat, &deg2);
  CHECK_FALSE(deg2);
}

TEST_CASE("a full image mask projects onto the visible ground wedge") {
  const geo::Camera cam = geo::make_camera();
  GridF mask(cam.width, cam.height, 1.0f);
  const geo::Pose pose{0.3, 2.35, 0.4, 0.0};
  const GridF ground = geo::project_mask(mask, pose, cam);

  int lit = 0;
  for (double v : ground.cells) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    if (v > 0.5) ++lit;
  }
  CHECK(lit > 20);

  // cells behind the camera stay dark
  CHECK(ground.at(geo::cell_index(0.1), geo::cell_index(2.35)) == 0.0);
  // the optical-axis ground point is fully covered
  const double ahead = 0.3 + 0.4 / std::tan(geo::kCameraPitch);
  CHECK(ground.at(geo::cell_index(ahead), geo::cell_index(2.35)) == 1.0);
}

TEST_CASE("rendered object masks project back onto the object's map cell") {
  const geo::Camera cam = geo::make_camera();
  const auto pool = sim::make_object_pool(8, 51);
  for (uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    const sim::Layout layout = sim::generate_layout(pool, seed);
    // stand back from the densest annotation and look at its object
    std::mt19937_64 rng(seed);
    const auto& target = layout.objects[rng() % layout.objects.size()];
    const double yaw = std::atan2(target.y - 2.35, target.x - 2.35);
    const geo::Pose pose{target.x - 1.4 * std::cos(yaw), target.y - 1.4 * std::sin(yaw), 0.4,
                         std::atan2(target.y - (target.y - 1.4 * std::sin(yaw)),
                                    target.x - (target.x - 1.4 * std::cos(yaw)))};
    const sim::RenderedScene scene = sim::render(layout, pose, cam);

    int idx = -1;
    for (const auto& a : scene.annotations)
      if (layout.objects[a.object].x == target.x && layout.objects[a.object].y == target.y)
        idx = a.object;
    if (idx < 0) continue;  // occluded from this viewpoint

    const GridF ground = geo::project_mask(sim::object_mask(scene, idx), pose, cam);
    double best = 0;
    for (double v : ground.cells) best = std::max(best, v);
    REQUIRE(best > 0.0);
    INFO("seed " << seed);
    CHECK(ground.at(geo::cell_index(target.x), geo::cell_index(target.y)) >= best - 1e-9);
  }
}

TEST_CASE("accumulation is a cellwise running max") {
  GridF a(geo::kMapSize, geo::kMapSize), b(geo::kMapSize, geo::kMapSize);
  a.at(1, 2) = 0.7;
  b.at(1, 2) = 0.4;
  b.at(5, 5) = 0.9;
  const GridF m = geo::accumulate(a, b);
  CHECK(m.at(1, 2) == 0.7);
  CHECK(m.at(5, 5) == 0.9);
  CHECK(m.at(0, 0) == 0.0);
  CHECK_THROWS(geo::accumulate(a, GridF(4, 4)));
}

TEST_CASE("observability only ever grows") {
  const geo::Camera cam = geo::make_camera();
  GridF obs(geo::kMapSize, geo::kMapSize);
  CHECK(geo::observed_fraction(obs) == 0.0);

  const geo::Pose p1{0.5, 2.35, 0.4, 0.0};
  const GridF once = geo::observability_update(obs, p1, cam);
  const double f1 = geo::observed_fraction(once);
  CHECK(f1 > 0.0);
  CHECK(f1 < 1.0);

  const GridF twice = geo::observability_update(once, p1, cam);
  CHECK(twice.cells == once.cells);

  const GridF swept = geo::observability_update(once, {4.2, 2.35, 0.4, M_PI}, cam);
  for (size_t i = 0; i < swept.cells.size(); ++i) CHECK(swept.cells[i] >= once.cells[i]);
  CHECK(geo::observed_fraction(swept) > f1);
}

TEST_CASE("context channels stack reference masks scaled by their encodings") {
  GridF ref(geo::kMapSize, geo::kMapSize);
  ref.at(3, 4) = 1.0;
  ref.at(3, 5) = 0.5;
  GridF all(geo::kMapSize, geo::kMapSize);
  all.at(9, 9) = 1.0;

  std::vector<double> psi(2, 0.0);
  psi[0] = 2.5;  // fit_dim pads the rest of the 38 channels with zeros

  const geo::ContextMap map = geo::build_context_map({ref, ref}, {psi, psi}, all);
  REQUIRE(map.channels() == 40);
  CHECK(map.chan[0].at(3, 4) == 5.0);
  CHECK(map.chan[0].at(3, 5) == 2.5);
  CHECK(map.chan[0].at(0, 0) == 0.0);
  CHECK(map.chan[1].at(3, 4) == 0.0);
  CHECK(map.all_objects().at(9, 9) == 1.0);
  CHECK(map.boundary().at(0, 0) == 1.0);
  CHECK(map.boundary().at(31, 17) == 1.0);
  CHECK(map.boundary().at(16, 16) == 0.0);

  CHECK_THROWS(geo::build_context_map({ref}, {psi, psi}, all));
  CHECK_THROWS(geo::build_context_map({GridF(4, 4)}, {psi}, all));
  CHECK_THROWS(geo::build_context_map({}, {}, GridF(4, 4)));

  const geo::ContextMap empty = geo::build_context_map({}, {}, all);
  CHECK(empty.chan[0].at(3, 4) == 0.0);
  CHECK(empty.boundary().at(0, 31) == 1.0);
}

TEST_CASE("map snapshots round trip through header plus binary") {
  GridF ref(geo::kMapSize, geo::kMapSize);
  std::mt19937_64 rng(77);
  for (auto& v : ref.cells) v = static_cast<double>(rng() % 1000) / 999.0;
  GridF all(geo::kMapSize, geo::kMapSize);
  all.at(2, 30) = 1.0;
  const geo::ContextMap map = geo::build_context_map({ref}, {{1.25, -0.5}}, all);

  GridF obs(geo::kMapSize, geo::kMapSize);
  obs.at(7, 7) = 1.0;

  geo::save_map_snapshot(map, obs, "test_snap", 42);
  const geo::MapSnapshot snap = geo::load_map_snapshot("test_snap");
  CHECK(snap.timestep == 42);
  REQUIRE(snap.map.channels() == map.channels());
  for (int c = 0; c < map.channels(); ++c) {
    // stored as float32; the builder's values are float-exact here
    for (size_t i = 0; i < map.chan[c].cells.size(); ++i)
      CHECK(snap.map.chan[c].cells[i] == static_cast<double>(static_cast<float>(map.chan[c].cells[i])));
  }
  CHECK(snap.observability.at(7, 7) == 1.0);

  // truncated payload is rejected
  {
    std::ofstream bin("test_snap.bin", std::ios::binary | std::ios::trunc);
    bin.write("abc", 3);
  }
  CHECK_THROWS(geo::load_map_snapshot("test_snap"));
  std::remove("test_snap.json");
  std::remove("test_snap.bin");
}
