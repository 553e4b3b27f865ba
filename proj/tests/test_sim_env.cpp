#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "groundnav/sim_env.hpp"

using namespace groundnav;

TEST_CASE("constant forward velocity integrates to the closed-form distance") {
  sim::AgentState s;
  s.x = 1.0;
  s.y = 1.0;
  for (int i = 0; i < 10; ++i) s = sim::step(s, {0.7, 0.0, false});
  CHECK(s.x == Catch::Approx(1.7).margin(1e-12));
  CHECK(s.y == Catch::Approx(1.0).margin(1e-12));
  CHECK(s.t == Catch::Approx(1.0).margin(1e-12));
  CHECK_FALSE(s.terminal);
  CHECK_FALSE(s.clamped_action);
}

TEST_CASE("pure rotation spins in place") {
  // the default yaw-rate limit is 1.0 rad/s, so a pi rad/s spin needs a
  // wider configuration to pass through unclamped
  sim::SimConfig cfg;
  cfg.omega_max = M_PI;
  sim::AgentState s;
  s.x = 2.0;
  s.y = 2.0;
  for (int i = 0; i < 10; ++i) s = sim::step(s, {0.0, M_PI, false}, cfg);
  CHECK(std::abs(s.yaw) == Catch::Approx(M_PI).margin(1e-12));
  CHECK(s.x == 2.0);
  CHECK(s.y == 2.0);

  SECTION("the default configuration clamps the same action") {
    sim::AgentState c;
    c = sim::step(c, {0.0, M_PI, false});
    CHECK(c.clamped_action);
    CHECK(c.yaw == Catch::Approx(sim::kMaxYawRate * sim::kDt).margin(1e-12));
  }
}

TEST_CASE("constant twist traces a circle of radius v over omega") {
  const double v = 0.5, omega = 0.8;
  sim::AgentState s;
  s.x = 2.35;
  s.y = 1.6;
  std::vector<std::array<double, 2>> pts{{s.x, s.y}};
  for (int i = 0; i < 1000; ++i) {
    s = sim::step(s, {v, omega, false});
    REQUIRE_FALSE(s.hit_boundary);
    pts.push_back({s.x, s.y});
  }
  // circumcenter of three spread samples, then every point must sit at
  // radius v/omega within 1%
  const auto [ax, ay] = pts[0];
  const auto [bx, by] = pts[333];
  const auto [cx, cy] = pts[666];
  const double d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
  REQUIRE(std::abs(d) > 1e-9);
  const double ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) +
                     (cx * cx + cy * cy) * (ay - by)) / d;
  const double uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) +
                     (cx * cx + cy * cy) * (bx - ax)) / d;
  const double want = v / omega;
  for (const auto& [px, py] : pts) {
    const double r = std::hypot(px - ux, py - uy);
    CHECK(r == Catch::Approx(want).epsilon(0.01));
  }
}

TEST_CASE("stop is terminal and further stepping is rejected") {
  sim::AgentState s;
  s.v = 0.5;
  s = sim::step(s, {0.0, 0.0, true});
  CHECK(s.terminal);
  CHECK(s.v == 0.0);
  CHECK(s.omega == 0.0);
  CHECK_THROWS(sim::step(s, {0.1, 0.0, false}));
}

TEST_CASE("the environment boundary clamps position and reports the hit") {
  sim::AgentState s;
  s.x = 0.05;
  s.y = 2.0;
  s.yaw = M_PI;
  s = sim::step(s, {0.7, 0.0, false});
  CHECK(s.hit_boundary);
  CHECK(s.x == 0.0);
  s = sim::step(s, {-0.7, 0.0, false});
  CHECK_FALSE(s.hit_boundary);
  CHECK(s.x == Catch::Approx(0.07).margin(1e-12));
}

TEST_CASE("velocity limits clamp actions exactly at the limit boundary") {
  sim::AgentState s;
  s = sim::step(s, {0.9, 0.0, false});
  CHECK(s.clamped_action);
  CHECK(s.v == 0.7);
  s = sim::step(s, {0.7, -1.0, false});
  CHECK_FALSE(s.clamped_action);
}

TEST_CASE("object pools are deterministic with distinct type ids") {
  const auto pool = sim::make_object_pool(48, 9);
  const auto again = sim::make_object_pool(48, 9);
  REQUIRE(pool.size() == 48);
  std::set<std::string> ids;
  for (size_t i = 0; i < pool.size(); ++i) {
    ids.insert(pool[i].id);
    CHECK(pool[i].id == again[i].id);
    CHECK(pool[i].radius == again[i].radius);
    CHECK(pool[i].radius >= 0.12);
    CHECK(pool[i].radius <= 0.20);
  }
  CHECK(ids.size() == 48);
  CHECK_THROWS(sim::make_object_pool(0, 1));
  CHECK_THROWS(sim::make_object_pool(49, 1));
}

TEST_CASE("layout generation respects count, spacing, and walls") {
  const auto pool = sim::make_object_pool(16, 2);

  const sim::Layout a = sim::generate_layout(pool, 1);
  const sim::Layout b = sim::generate_layout(pool, 1);
  REQUIRE(a.objects.size() == b.objects.size());
  for (size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].type.id == b.objects[i].type.id);
    CHECK(a.objects[i].x == b.objects[i].x);
  }
  CHECK(a.objects.size() >= 6);
  CHECK(a.objects.size() <= 16);
  for (size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].x >= 0.25);
    CHECK(a.objects[i].x <= 4.45);
    CHECK(a.objects[i].y >= 0.25);
    for (size_t j = i + 1; j < a.objects.size(); ++j)
      CHECK(std::hypot(a.objects[i].x - a.objects[j].x, a.objects[i].y - a.objects[j].y) >= 0.3);
  }

  sim::LayoutConfig cfg;
  cfg.forced_count = 5;
  CHECK_THROWS(sim::generate_layout(pool, 1, cfg));
  cfg.forced_count = 17;
  CHECK_THROWS(sim::generate_layout(pool, 1, cfg));

  SECTION("no-repeat uses each pool type at most once") {
    const auto six = sim::make_object_pool(6, 3);
    sim::LayoutConfig nr;
    nr.forced_count = 6;
    nr.no_repeat = true;
    const sim::Layout l = sim::generate_layout(six, 4, nr);
    std::set<std::string> ids;
    for (const auto& o : l.objects) ids.insert(o.type.id);
    CHECK(ids.size() == 6);
    CHECK_THROWS(sim::generate_layout(sim::make_object_pool(5, 3), 4, nr));
  }
}

TEST_CASE("rendering centers an on-axis object and annotates it tightly") {
  const geo::Camera cam = geo::make_camera();
  sim::ObjectType type;
  type.id = "test_disk";
  type.shape = sim::Shape::Disk;
  type.color = {0.8, 0.1, 0.1};
  type.color_name = "red";
  type.radius = 0.15;
  type.height = 0.2;

  sim::Layout layout;
  const double ahead = 1.0 + 0.4 / std::tan(geo::kCameraPitch);
  layout.objects.push_back({type, ahead, 2.35});
  const geo::Pose pose{1.0, 2.35, 0.4, 0.0};
  const sim::RenderedScene scene = sim::render(layout, pose, cam);

  REQUIRE(scene.annotations.size() == 1);
  const sim::BoxAnnotation& a = scene.annotations[0];
  CHECK(a.object == 0);
  CHECK(a.id == "test_disk");
  CHECK(a.pixel_count >= 30);

  // box equals the exact pixel extents of the mask, max exclusive
  int x_min = scene.width, x_max = -1, y_min = scene.height, y_max = -1, count = 0;
  double cx_sum = 0;
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      if (scene.object_index.at(x, y) == 0) {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
        cx_sum += x + 0.5;
        ++count;
      }
  CHECK(a.x_min == x_min);
  CHECK(a.x_max == x_max + 1);
  CHECK(a.y_min == y_min);
  CHECK(a.y_max == y_max + 1);
  CHECK(a.pixel_count == count);
  CHECK(cx_sum / count == Catch::Approx(64.0).margin(1.0));

  SECTION("all pixel values stay in unit range") {
    for (float v : scene.rgb) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  SECTION("empty layouts and objects behind the camera render nothing") {
    const sim::RenderedScene none = sim::render(sim::Layout{}, pose, cam);
    CHECK(none.annotations.empty());
    sim::Layout behind;
    behind.objects.push_back({type, 0.3, 2.35});
    CHECK(sim::render(behind, pose, cam).annotations.empty());
  }
  SECTION("rendering is deterministic and color jitter perturbs it") {
    const sim::RenderedScene again = sim::render(layout, pose, cam);
    CHECK(again.rgb == scene.rgb);
    const sim::RenderedScene jittered = sim::render(layout, pose, cam, 123);
    CHECK(jittered.rgb != scene.rgb);
    REQUIRE(jittered.annotations.size() == 1);
    CHECK(jittered.annotations[0].pixel_count == a.pixel_count);
  }
}

TEST_CASE("patch cropping samples nearest pixels into a square") {
  sim::RenderedScene scene;
  scene.width = 4;
  scene.height = 4;
  scene.rgb.resize(4 * 4 * 3);
  scene.object_index = Grid<int>(4, 4, -1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) scene.rgb[(static_cast<size_t>(y) * 4 + x) * 3] = x / 10.0f + y;

  const db::ImagePatch p = sim::crop_patch(scene, 0, 0, 4, 4, 2);
  CHECK(p.h == 2);
  CHECK(p.w == 2);
  CHECK(p.c == 3);
  // out pixel centers land on source pixels (1,1), (3,1), (1,3), (3,3)
  CHECK(p.at(0, 0, 0) == scene.channel(1, 1, 0));
  CHECK(p.at(1, 0, 0) == scene.channel(3, 1, 0));
  CHECK(p.at(0, 1, 0) == scene.channel(1, 3, 0));
  CHECK(p.at(1, 1, 0) == scene.channel(3, 3, 0));
  CHECK_THROWS(sim::crop_patch(scene, 2, 2, 2, 4));
}

TEST_CASE("annotated dataset generation is deterministic and mines hard negatives") {
  const auto pool = sim::make_object_pool(8, 21);
  const sim::ArDataset ds = sim::gen_ar_dataset(pool, 8, 5);
  const sim::ArDataset again = sim::gen_ar_dataset(pool, 8, 5);

  REQUIRE(ds.frames.size() == 8);
  REQUIRE(ds.patches.size() == again.patches.size());
  for (size_t i = 0; i < ds.patches.size(); ++i) {
    CHECK(ds.patches[i].label == again.patches[i].label);
    CHECK(ds.patches[i].patch.data == again.patches[i].patch.data);
  }
  REQUIRE_FALSE(ds.triplets.empty());

  SECTION("triplets pair same-label positives with other-label negatives") {
    for (const auto& t : ds.triplets) {
      const std::string& label = ds.patches[t.anchor].label;
      REQUIRE_FALSE(t.positives.empty());
      REQUIRE_FALSE(t.negatives.empty());
      for (int p : t.positives) CHECK(ds.patches[p].label == label);
      for (int n : t.negatives) CHECK(ds.patches[n].label != label);
    }
  }
  SECTION("the first negative comes from the closest class by mean patch") {
    std::map<std::string, std::vector<double>> mean;
    std::map<std::string, int> n_of;
    for (const auto& p : ds.patches) {
      auto& m = mean[p.label];
      m.resize(p.patch.data.size(), 0.0);
      for (size_t i = 0; i < m.size(); ++i) m[i] += p.patch.data[i];
      n_of[p.label]++;
    }
    for (auto& [label, m] : mean)
      for (double& v : m) v /= n_of[label];

    for (const auto& t : ds.triplets) {
      const std::string& label = ds.patches[t.anchor].label;
      std::string closest;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [other, m] : mean) {
        if (other == label || n_of[other] < 2) continue;
        const double d = l2sq(mean[label], m);
        if (d < best) {
          best = d;
          closest = other;
        }
      }
      CHECK(ds.patches[t.negatives[0]].label == closest);
    }
  }
  SECTION("patches come from annotations above the pixel floor") {
    size_t usable = 0;
    for (const auto& f : ds.frames)
      for (const auto& a : f.scene.annotations)
        if (a.pixel_count >= 30) ++usable;
    CHECK(ds.patches.size() == usable);
  }
}

TEST_CASE("exemplar databases built from patches cap images and carry colors") {
  const auto pool = sim::make_object_pool(8, 21);
  const sim::ArDataset ds = sim::gen_ar_dataset(pool, 30, 6);
  const db::ObjectDatabase d = sim::build_database(pool, ds.patches);

  REQUIRE_FALSE(d.entries.empty());
  db::validate(d);
  for (const auto& e : d.entries) {
    CHECK(e.images.size() <= static_cast<size_t>(db::kMaxExemplars));
    REQUIRE(e.phrases.size() == 3);
    const sim::ObjectType* type = nullptr;
    for (const auto& t : pool)
      if (t.id == e.id) type = &t;
    REQUIRE(type != nullptr);
    for (const auto& ph : e.phrases) {
      bool has_color = false;
      for (const auto& tok : ph) has_color = has_color || tok == type->color_name;
      CHECK(has_color);
    }
  }
}

TEST_CASE("dataset directories round trip patches and triplets") {
  const auto pool = sim::make_object_pool(6, 10);
  const sim::ArDataset ds = sim::gen_ar_dataset(pool, 4, 11);
  const std::string dir = "test_dataset_dir";
  sim::save_dataset(ds, dir);

  std::vector<metric::LabeledPatch> patches;
  std::vector<metric::TripletSpec> triplets;
  sim::load_patches_triplets(dir, &patches, &triplets);
  REQUIRE(patches.size() == ds.patches.size());
  for (size_t i = 0; i < patches.size(); ++i) {
    CHECK(patches[i].label == ds.patches[i].label);
    CHECK(patches[i].patch.data == ds.patches[i].patch.data);
  }
  REQUIRE(triplets.size() == ds.triplets.size());
  for (size_t i = 0; i < triplets.size(); ++i) {
    CHECK(triplets[i].anchor == ds.triplets[i].anchor);
    CHECK(triplets[i].positives == ds.triplets[i].positives);
    CHECK(triplets[i].negatives == ds.triplets[i].negatives);
  }
  CHECK(std::filesystem::exists(dir + "/manifest.json"));
  CHECK(std::filesystem::exists(dir + "/frame_0000.bin"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("layouts round trip through JSON") {
  const auto pool = sim::make_object_pool(6, 10);
  const sim::Layout layout = sim::generate_layout(pool, 77);
  const sim::Layout r = sim::layout_from_json(sim::layout_to_json(layout));
  REQUIRE(r.objects.size() == layout.objects.size());
  CHECK(r.edge == layout.edge);
  for (size_t i = 0; i < r.objects.size(); ++i) {
    CHECK(r.objects[i].type.id == layout.objects[i].type.id);
    CHECK(r.objects[i].type.shape == layout.objects[i].type.shape);
    CHECK(r.objects[i].type.radius == layout.objects[i].type.radius);
    CHECK(r.objects[i].x == layout.objects[i].x);
    CHECK(r.objects[i].y == layout.objects[i].y);
  }
}

TEST_CASE("the agent camera rides at the configured height") {
  sim::AgentState s;
  s.x = 1.5;
  s.y = 2.5;
  s.yaw = 0.3;
  const geo::Pose p = sim::agent_camera_pose(s);
  CHECK(p.x == 1.5);
  CHECK(p.y == 2.5);
  CHECK(p.z == geo::kCameraHeight);
  CHECK(p.yaw == 0.3);
}
