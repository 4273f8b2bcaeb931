#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dunet/data.hpp"
#include "dunet/io.hpp"

using namespace dunet;

TEST_CASE("generation is deterministic and in range") {
  const auto a = generate(7, 6, 11, 32);
  const auto b = generate(7, 6, 11, 32);
  const auto c = generate(8, 6, 11, 32);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& s : a.samples) {
    CHECK(s.landmarks.size() == 11);
    CHECK(s.image.size() == 3 * 32 * 32);
    CHECK(s.reference_length > 0);
    for (const auto& p : s.landmarks) {
      CHECK(p.visible);
      CHECK((p.x >= 0 && p.x <= 1 && p.y >= 0 && p.y <= 1));
    }
    for (double v : s.image) CHECK((v >= 0 && v <= 1));
  }
  CHECK_THROWS_AS(generate(1, 1, 5, 15), DataError);
  CHECK_THROWS_AS(generate(1, 0, 5, 32), DataError);
}

TEST_CASE("landmark pixels are local maxima of their markers") {
  const auto d = generate(3, 5, 7, 48);
  const int R = 48;
  for (const auto& s : d.samples) {
    for (const auto& p : s.landmarks) {
      const int j = std::min(R - 1, static_cast<int>(p.x * R));
      const int i = std::min(R - 1, static_cast<int>(p.y * R));
      for (int ch = 0; ch < s.channels; ++ch) {
        const double* plane = s.image.data() + ch * R * R;
        const double peak = plane[i * R + j];
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const int y = i + di, x = j + dj;
            if (y < 0 || x < 0 || y >= R || x >= R) continue;
            CHECK(plane[y * R + x] <= peak);
          }
      }
    }
  }
}

TEST_CASE("identity augmentation leaves the sample unchanged") {
  const auto s = generate_sample(1, 0, 9, 32);
  const auto t = apply_augment(s, {1.0, 0.0, false});
  CHECK(t == s);
  REQUIRE(t.augmentation);
  CHECK(t.augmentation->affine == Affine{});
}

TEST_CASE("rotation composes back within tolerance") {
  const auto s = generate_sample(2, 0, 9, 32);
  const auto a = apply_augment(s, {1.0, 30.0, false});
  const auto b = apply_augment(a, {1.0, -30.0, false});
  for (std::size_t k = 0; k < s.landmarks.size(); ++k) {
    CHECK(std::abs(b.landmarks[k].x - s.landmarks[k].x) < 1e-6);
    CHECK(std::abs(b.landmarks[k].y - s.landmarks[k].y) < 1e-6);
  }
}

TEST_CASE("flip swaps left and right and is an involution") {
  const auto s = generate_sample(4, 0, 12, 32);
  const auto perm = flip_permutation(12);
  CHECK(perm[0] == 1);
  CHECK(perm[3] == 4);
  CHECK(perm[2] == 2);
  CHECK(perm[11] == 11);
  const auto f = apply_augment(s, {1.0, 0.0, true});
  CHECK(std::abs(f.landmarks[0].x - (1 - s.landmarks[1].x)) < 1e-15);
  CHECK(f.landmarks[0].x < f.landmarks[1].x + 1);
  const auto ff = apply_augment(f, {1.0, 0.0, true});
  for (std::size_t k = 0; k < s.landmarks.size(); ++k) {
    CHECK(std::abs(ff.landmarks[k].x - s.landmarks[k].x) < 1e-12);
    CHECK(ff.landmarks[k].y == s.landmarks[k].y);
  }
  const auto img = ff.image;
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(img[i] - s.image[i]) < 1e-12);
}

TEST_CASE("recorded affine reproduces the augmented landmarks exactly") {
  const auto s = generate_sample(5, 0, 15, 32);
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = augment(s, rng);
    REQUIRE(a.augmentation);
    const auto& aug = *a.augmentation;
    CHECK(aug.params.scale >= 0.75);
    CHECK(aug.params.scale <= 1.25);
    CHECK(std::abs(aug.params.angle_deg) <= 30.0);
    for (std::size_t k = 0; k < s.landmarks.size(); ++k) {
      const auto q = aug.affine.apply(s.landmarks[aug.permutation[k]]);
      CHECK(q.x == a.landmarks[k].x);
      CHECK(q.y == a.landmarks[k].y);
      const bool in = q.x >= 0 && q.x <= 1 && q.y >= 0 && q.y <= 1;
      CHECK(a.landmarks[k].visible == in);
    }
  }
}

TEST_CASE("out-of-frame landmarks become invisible") {
  Sample s = generate_sample(6, 0, 5, 32);
  s.landmarks[0] = {0.02, 0.5, true};
  const auto a = apply_augment(s, {1.25, 0.0, false});
  CHECK_FALSE(a.landmarks[0].visible);
  CHECK(a.landmarks[2].visible);
}

TEST_CASE("dataset round trip is bit-exact") {
  const auto d = generate(11, 4, 8, 24, 2);
  const auto dir = std::filesystem::temp_directory_path() / "dunet_test_dataset";
  std::filesystem::remove_all(dir);
  write_dataset(dir, d);
  const auto back = read_dataset(dir);
  CHECK(back == d);
  const auto manifest = read_file(dir / "manifest.txt");
  CHECK(manifest.rfind("dunet-dataset 1\ncount 4\n", 0) == 0);
  CHECK(std::filesystem::file_size(dir / "samples.bin") == 4 * 4 * (2 * 24 * 24 + 3 * 8 + 1));
  std::filesystem::remove_all(dir);
}
