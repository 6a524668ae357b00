#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "vsmk/data.hpp"
#include "vsmk/synthetic.hpp"

using namespace vsmk;
namespace fs = std::filesystem;

namespace {

Tensor<float> smooth_image(std::size_t S, std::uint64_t seed) {
    Rng rng(seed);
    const double fy = rng.uniform(0.5, 1.5), fx = rng.uniform(0.5, 1.5);
    const double ph = rng.uniform(0.0, 6.28);
    Tensor<float> img({S, S});
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
            const double uy = double(y) / S, ux = double(x) / S;
            img.at(y, x) = static_cast<float>(
                0.5 + 0.2 * std::sin(6.28 * (fy * uy + fx * ux) + ph) + 0.15 * uy - 0.1 * ux);
        }
    return img;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("vsmk-" + tag + "-" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

double max_image_diff(const Tensor<float>& a, const Tensor<float>& b) {
    REQUIRE(a.shape() == b.shape());
    return testutil::max_abs_diff(a.data(), b.data(), a.size());
}

}  // namespace

TEST_CASE("horizontal flip is an exact involution") {
    Rng rng(5);
    Tensor<float> img = testutil::random_tensor<float>(rng, {7, 12}, 0.0f, 1.0f);
    Tensor<float> once = data::hflip(img);
    for (std::size_t y = 0; y < 7; ++y)
        for (std::size_t x = 0; x < 12; ++x) CHECK(once.at(y, x) == img.at(y, 11 - x));
    CHECK(max_image_diff(data::hflip(once), img) == 0.0);
    CHECK_THROWS_AS(data::hflip(Tensor<float>({2, 3, 4})), ShapeError);
}

TEST_CASE("resize: identity, pooling consistency, and area averaging") {
    Tensor<float> img = smooth_image(32, 9);

    SUBCASE("same-extent resize is the identity") {
        CHECK(max_image_diff(data::resize(img, 32, 32), img) == 0.0);
    }

    SUBCASE("constant images stay constant at any extent") {
        Tensor<float> c = Tensor<float>::full({20, 28}, 0.5f);
        for (auto [oh, ow] : std::vector<std::pair<std::size_t, std::size_t>>{
                 {40, 56}, {10, 14}, {5, 7}, {20, 28}}) {
            Tensor<float> r = data::resize(c, oh, ow);
            for (std::size_t i = 0; i < r.size(); ++i)
                CHECK(r.data()[i] == doctest::Approx(0.5f).epsilon(1e-6));
        }
    }

    SUBCASE("halving matches the 2x2 block average") {
        Tensor<float> half = data::resize(img, 16, 16);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                const double want = 0.25 * (img.at(2 * y, 2 * x) + img.at(2 * y, 2 * x + 1) +
                                            img.at(2 * y + 1, 2 * x) + img.at(2 * y + 1, 2 * x + 1));
                CHECK(half.at(y, x) == doctest::Approx(want).epsilon(1e-6));
            }
    }

    SUBCASE("shrinking beyond 2x matches the 4x4 box oracle") {
        Tensor<float> quarter = data::resize(img, 8, 8);
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) {
                double want = 0;
                for (std::size_t dy = 0; dy < 4; ++dy)
                    for (std::size_t dx = 0; dx < 4; ++dx)
                        want += img.at(4 * y + dy, 4 * x + dx);
                CHECK(quarter.at(y, x) == doctest::Approx(want / 16.0).epsilon(1e-6));
            }
    }

    SUBCASE("upscaling stays within the source range") {
        Tensor<float> up = data::resize(img, 64, 64);
        float lo = 1e9f, hi = -1e9f;
        for (std::size_t i = 0; i < img.size(); ++i) {
            lo = std::min(lo, img.data()[i]);
            hi = std::max(hi, img.data()[i]);
        }
        for (std::size_t i = 0; i < up.size(); ++i) {
            CHECK(up.data()[i] >= lo - 1e-6f);
            CHECK(up.data()[i] <= hi + 1e-6f);
        }
    }
}

TEST_CASE("affine resampling: identity, inverse rotations, zero fill") {
    Tensor<float> img = smooth_image(48, 13);

    SUBCASE("identity parameters reproduce the image") {
        Tensor<float> out = data::affine_bilinear(img, 0.0, 1.0, 0.0, 0.0);
        CHECK(max_image_diff(out, img) < 1e-6);
    }

    SUBCASE("+10 then -10 degrees returns near the original in the interior") {
        Tensor<float> fwd = data::affine_bilinear(img, 10.0, 1.0, 0.0, 0.0);
        Tensor<float> back = data::affine_bilinear(fwd, -10.0, 1.0, 0.0, 0.0);
        double mae = 0;
        std::size_t cnt = 0;
        for (std::size_t y = 8; y < 40; ++y)
            for (std::size_t x = 8; x < 40; ++x) {
                mae += std::abs(double(back.at(y, x)) - img.at(y, x));
                ++cnt;
            }
        CHECK(mae / cnt < 2e-2);
    }

    SUBCASE("translation fills vacated pixels with zero") {
        Tensor<float> bright = Tensor<float>::full({16, 16}, 1.0f);
        Tensor<float> out = data::affine_bilinear(bright, 0.0, 1.0, 0.5, 0.0);
        CHECK(out.at(8, 0) == 0.0f);   // vacated left half
        CHECK(out.at(8, 12) == 1.0f);  // shifted content
    }

    SUBCASE("invalid scale is rejected") {
        CHECK_THROWS_AS(data::affine_bilinear(img, 0.0, 0.0, 0.0, 0.0), ConfigError);
    }
}

TEST_CASE("binary graymap round trips") {
    TempDir td("pgm");
    // Values snapped to the 8-bit grid round-trip exactly.
    Tensor<float> img({5, 9});
    Rng rng(3);
    for (std::size_t i = 0; i < img.size(); ++i)
        img.data()[i] = static_cast<float>(rng.uniform_int(256) / 255.0);

    SUBCASE("8-bit payload") {
        data::write_pgm(td.path / "a.pgm", img, 255);
        Tensor<float> back = data::read_pgm(td.path / "a.pgm");
        CHECK(max_image_diff(back, img) == 0.0);
    }

    SUBCASE("16-bit payload") {
        Tensor<float> img16({4, 6});
        for (std::size_t i = 0; i < img16.size(); ++i)
            img16.data()[i] = static_cast<float>(rng.uniform_int(65536) / 65535.0);
        data::write_pgm(td.path / "b.pgm", img16, 65535);
        Tensor<float> back = data::read_pgm(td.path / "b.pgm");
        CHECK(max_image_diff(back, img16) < 1e-7);
    }

    SUBCASE("header comments are skipped") {
        std::ofstream f(td.path / "c.pgm", std::ios::binary);
        f << "P5\n# a comment\n2 2\n# another\n255\n";
        const unsigned char px[4] = {0, 85, 170, 255};
        f.write(reinterpret_cast<const char*>(px), 4);
        f.close();
        Tensor<float> back = data::read_pgm(td.path / "c.pgm");
        CHECK(back.at(0, 1) == doctest::Approx(85.0 / 255.0));
        CHECK(back.at(1, 1) == 1.0f);
    }

    SUBCASE("malformed files are rejected") {
        std::ofstream(td.path / "bad.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
        CHECK_THROWS_AS(data::read_pgm(td.path / "bad.pgm"), DataError);
        std::ofstream f(td.path / "short.pgm", std::ios::binary);
        f << "P5\n4 4\n255\n";
        const unsigned char px[3] = {1, 2, 3};
        f.write(reinterpret_cast<const char*>(px), 3);
        f.close();
        CHECK_THROWS_AS(data::read_pgm(td.path / "short.pgm"), DataError);
        CHECK_THROWS_AS(data::read_pgm(td.path / "absent.pgm"), DataError);
    }
}

TEST_CASE("missing-view masking overwrites absent slots with zeros") {
    Rng rng(17);
    data::FourViewStudy s;
    s.study_id = "m1";
    s.images[0] = testutil::random_tensor<float>(rng, {8, 8}, 0.0f, 1.0f);
    s.images[1] = testutil::random_tensor<float>(rng, {8, 8}, 0.0f, 1.0f);
    s.images[2] = testutil::random_tensor<float>(rng, {8, 8}, 0.0f, 1.0f);  // garbage
    s.images[3] = testutil::random_tensor<float>(rng, {8, 8}, 0.0f, 1.0f);  // garbage
    s.presence = {true, true, false, false};
    s.labels.label_l = 1;
    s.labels.birads_l = 5;

    data::FourViewStudy masked = s;
    data::apply_missing_mask(masked);
    CHECK(max_image_diff(masked.images[0], s.images[0]) == 0.0);
    CHECK(max_image_diff(masked.images[1], s.images[1]) == 0.0);
    for (std::size_t v : {2ul, 3ul}) {
        REQUIRE(masked.images[v].size() == 64);
        for (std::size_t i = 0; i < 64; ++i) CHECK(masked.images[v].data()[i] == 0.0f);
    }

    // Two studies differing only in absent-slot garbage agree bitwise after masking.
    data::FourViewStudy other = s;
    other.images[2] = testutil::random_tensor<float>(rng, {8, 8}, 0.0f, 1.0f);
    data::apply_missing_mask(other);
    CHECK(max_image_diff(other.images[2], masked.images[2]) == 0.0);

    data::FourViewStudy broken = s;
    broken.images[1] = Tensor<float>();
    CHECK_THROWS_AS(data::apply_missing_mask(broken), DataError);
}

TEST_CASE("augmentation: determinism, label safety, stream stability") {
    Rng gen(23);
    data::FourViewStudy s;
    s.study_id = "a1";
    for (std::size_t v = 0; v < 4; ++v) {
        s.images[v] = smooth_image(24, 100 + v);
        s.presence[v] = true;
    }
    s.labels = {1, 0, 5, 1};

    SUBCASE("same draw stream gives bitwise-equal results") {
        Rng r1(7), r2(7);
        data::FourViewStudy a1 = data::augment(s, r1);
        data::FourViewStudy a2 = data::augment(s, r2);
        for (std::size_t v = 0; v < 4; ++v)
            CHECK(max_image_diff(a1.images[v], a2.images[v]) == 0.0);
    }

    SUBCASE("labels and presence never change") {
        Rng r(9);
        data::FourViewStudy a = data::augment(s, r);
        CHECK(a.labels.label_l == 1);
        CHECK(a.labels.birads_l == 5);
        CHECK(a.presence == s.presence);
        CHECK(a.study_id == s.study_id);
    }

    SUBCASE("absent views are untouched and do not shift later draws") {
        data::FourViewStudy partial = s;
        partial.presence[0] = partial.presence[1] = false;
        partial.labels.label_l = -1;
        partial.labels.birads_l = -1;
        Rng r1(11), r2(11);
        data::FourViewStudy full_aug = data::augment(s, r1);
        data::FourViewStudy part_aug = data::augment(partial, r2);
        // Right-side views got identical transforms in both cases.
        CHECK(max_image_diff(full_aug.images[2], part_aug.images[2]) == 0.0);
        CHECK(max_image_diff(full_aug.images[3], part_aug.images[3]) == 0.0);
        // Left views of the partial study kept their original pixels.
        CHECK(max_image_diff(part_aug.images[0], partial.images[0]) == 0.0);
    }
}

TEST_CASE("preprocessing replicates channels and zeroes absent slots") {
    data::FourViewStudy s;
    s.study_id = "p1";
    s.images[0] = Tensor<float>::full({16, 16}, 0.5f);
    s.images[1] = smooth_image(16, 31);
    s.presence = {true, true, false, false};
    s.labels.label_l = 0;
    s.labels.birads_l = 1;

    auto views = data::preprocess(s, 16);
    for (std::size_t v = 0; v < 4; ++v) {
        REQUIRE(views[v].shape() == Tensor<float>::Shape{3, 16, 16});
    }
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 256; ++i) {
            CHECK(views[0].data()[c * 256 + i] == 0.5f);
            CHECK(views[1].data()[c * 256 + i] == s.images[1].data()[i]);
            CHECK(views[2].data()[c * 256 + i] == 0.0f);
        }

    // Resize happens inside preprocessing.
    auto big = data::preprocess(s, 32);
    CHECK(big[0].shape() == Tensor<float>::Shape{3, 32, 32});
    CHECK(big[0].data()[0] == doctest::Approx(0.5f).epsilon(1e-6));
}

TEST_CASE("synthetic generation: determinism, structure, statistics") {
    data::SyntheticSpec spec;
    spec.image_size = 32;
    spec.seed = 99;

    SUBCASE("same seed twice is bitwise identical") {
        auto d1 = data::generate_synthetic(spec, 8);
        auto d2 = data::generate_synthetic(spec, 8);
        REQUIRE(d1.size() == 8);
        for (std::size_t i = 0; i < 8; ++i) {
            CHECK(d1[i].study_id == d2[i].study_id);
            CHECK(d1[i].presence == d2[i].presence);
            for (std::size_t v = 0; v < 4; ++v)
                if (d1[i].presence[v])
                    CHECK(max_image_diff(d1[i].images[v], d2[i].images[v]) == 0.0);
        }
    }

    SUBCASE("zero missing probability keeps every view present") {
        data::SyntheticSpec full = spec;
        full.missing_side_prob = 0.0;
        for (const auto& s : data::generate_synthetic(full, 40))
            for (bool p : s.presence) CHECK(p);
    }

    SUBCASE("labels are consistent with grades and masking") {
        auto ds = data::generate_synthetic(spec, 200);
        std::size_t grade3 = 0, grade3_malignant = 0;
        for (const auto& s : ds) {
            CHECK((s.presence[0] == s.presence[1]));
            CHECK((s.presence[2] == s.presence[3]));
            CHECK((s.presence[0] || s.presence[2]));  // at most one side dropped
            for (int side = 0; side < 2; ++side) {
                const bool present = s.presence[side * 2];
                const int label = side == 0 ? s.labels.label_l : s.labels.label_r;
                const int grade = side == 0 ? s.labels.birads_l : s.labels.birads_r;
                if (!present) {
                    CHECK(label == -1);
                    CHECK(grade == -1);
                    continue;
                }
                REQUIRE(grade >= 1);
                REQUIRE(grade <= 5);
                if (grade >= 4) CHECK(label == 1);
                if (grade <= 2) CHECK(label == 0);
                if (grade == 3) {
                    ++grade3;
                    grade3_malignant += label == 1;
                }
            }
        }
        REQUIRE(grade3 > 10);
        // Divergence rate 0.1: allow a generous binomial band.
        const double rate = double(grade3_malignant) / grade3;
        CHECK(rate < 0.35);
    }

    SUBCASE("pixel values sit on the 8-bit grid in [0,1]") {
        auto ds = data::generate_synthetic(spec, 3);
        for (const auto& s : ds)
            for (std::size_t v = 0; v < 4; ++v) {
                if (!s.presence[v]) continue;
                for (std::size_t i = 0; i < s.images[v].size(); ++i) {
                    const double x = s.images[v].data()[i];
                    CHECK(x >= 0.0);
                    CHECK(x <= 1.0);
                    const double q = x * 255.0;
                    CHECK(std::abs(q - std::lround(q)) < 1e-4);
                }
            }
    }

    SUBCASE("grade counts stay within 3 sigma of the multinomial expectation") {
        data::SyntheticSpec big = spec;
        big.missing_side_prob = 0.0;
        const std::size_t n = 1000;
        auto ds = data::generate_synthetic(big, n);
        std::vector<std::size_t> counts(5, 0);
        for (const auto& s : ds) {
            ++counts[static_cast<std::size_t>(s.labels.birads_l - 1)];
            ++counts[static_cast<std::size_t>(s.labels.birads_r - 1)];
        }
        const double trials = 2.0 * n, p = 0.2;
        const double mean = trials * p, sigma = std::sqrt(trials * p * (1 - p));
        for (std::size_t g = 0; g < 5; ++g) {
            CHECK(double(counts[g]) > mean - 3 * sigma);
            CHECK(double(counts[g]) < mean + 3 * sigma);
        }
    }

    SUBCASE("higher grades are more conspicuous") {
        data::SyntheticSpec sep = spec;
        sep.grades = {1, 5};
        sep.missing_side_prob = 0.0;
        auto ds = data::generate_synthetic(sep, 60);
        double lo_mean = 0, hi_mean = 0;
        std::size_t lo_n = 0, hi_n = 0;
        for (const auto& s : ds)
            for (int side = 0; side < 2; ++side) {
                const int grade = side == 0 ? s.labels.birads_l : s.labels.birads_r;
                const auto& img = s.images[static_cast<std::size_t>(2 * side)];
                double m = 0;
                for (std::size_t i = 0; i < img.size(); ++i) m += img.data()[i];
                m /= double(img.size());
                if (grade == 1) {
                    lo_mean += m;
                    ++lo_n;
                } else {
                    hi_mean += m;
                    ++hi_n;
                }
            }
        REQUIRE(lo_n > 0);
        REQUIRE(hi_n > 0);
        CHECK(hi_mean / hi_n > lo_mean / lo_n + 0.05);
    }

    SUBCASE("invalid mixtures are rejected") {
        data::SyntheticSpec bad = spec;
        bad.mixture = {0.5, 0.5};
        CHECK_THROWS_AS(data::generate_synthetic(bad, 1), ConfigError);
        bad.mixture = {0.2, 0.2, 0.2, 0.2, 0.1};
        CHECK_THROWS_AS(data::generate_synthetic(bad, 1), ConfigError);
        data::SyntheticSpec neg = spec;
        neg.missing_side_prob = 1.5;
        CHECK_THROWS_AS(data::generate_synthetic(neg, 1), ConfigError);
    }
}

TEST_CASE("export then ingest round-trips the dataset") {
    TempDir td("roundtrip");
    data::SyntheticSpec spec;
    spec.image_size = 32;
    spec.seed = 7;
    spec.missing_side_prob = 0.3;
    auto ds = data::generate_synthetic(spec, 12);
    data::export_dataset(td.path, ds);
    auto back = data::ingest(td.path, 32);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back[i].study_id == ds[i].study_id);
        CHECK(back[i].presence == ds[i].presence);
        CHECK(back[i].labels.label_l == ds[i].labels.label_l);
        CHECK(back[i].labels.label_r == ds[i].labels.label_r);
        CHECK(back[i].labels.birads_l == ds[i].labels.birads_l);
        CHECK(back[i].labels.birads_r == ds[i].labels.birads_r);
        for (std::size_t v = 0; v < 4; ++v)
            if (ds[i].presence[v])
                CHECK(max_image_diff(back[i].images[v], ds[i].images[v]) < 1e-6);
    }

    SUBCASE("right views are mirrored on disk") {
        // Find a study with a present right side and an asymmetric image.
        for (const auto& s : ds) {
            if (!s.presence[2]) continue;
            Tensor<float> disk = data::read_pgm(td.path / (s.study_id + "_rcc.pgm"));
            CHECK(max_image_diff(data::hflip(disk), s.images[2]) == 0.0);
            break;
        }
    }
}

TEST_CASE("ingest validates manifests and bears study ids in errors") {
    TempDir td("ingest");
    Tensor<float> img = Tensor<float>::full({8, 8}, 0.25f);
    data::write_pgm(td.path / "x_lcc.pgm", img);
    data::write_pgm(td.path / "x_lmlo.pgm", img);

    auto write_manifest = [&](const std::string& rows) {
        std::ofstream f(td.path / data::kManifestName);
        f << data::kManifestHeader << "\n" << rows;
    };

    SUBCASE("empty manifest ingests successfully") {
        write_manifest("");
        CHECK(data::ingest(td.path, 8).empty());
    }

    SUBCASE("valid single-sided study loads") {
        write_manifest("x,x_lcc.pgm,x_lmlo.pgm,,,1,-1,5,-1\n");
        auto ds = data::ingest(td.path, 8);
        REQUIRE(ds.size() == 1);
        CHECK(ds[0].presence[0]);
        CHECK(!ds[0].presence[2]);
        CHECK(ds[0].labels.label_r == -1);
    }

    SUBCASE("within-side partial views are rejected") {
        write_manifest("x,x_lcc.pgm,,,,1,-1,5,-1\n");
        CHECK_THROWS_WITH_AS(data::ingest(td.path, 8),
                             doctest::Contains("single view"), DataError);
    }

    SUBCASE("missing image files are rejected with the study id") {
        write_manifest("x,x_lcc.pgm,x_gone.pgm,,,1,-1,5,-1\n");
        CHECK_THROWS_WITH_AS(data::ingest(td.path, 8), doctest::Contains("x_gone.pgm"),
                             DataError);
    }

    SUBCASE("labels outside their range are rejected") {
        write_manifest("x,x_lcc.pgm,x_lmlo.pgm,,,3,-1,5,-1\n");
        CHECK_THROWS_AS(data::ingest(td.path, 8), DataError);
        write_manifest("x,x_lcc.pgm,x_lmlo.pgm,,,1,-1,9,-1\n");
        CHECK_THROWS_AS(data::ingest(td.path, 8), DataError);
    }

    SUBCASE("label/presence consistency is enforced") {
        write_manifest("x,x_lcc.pgm,x_lmlo.pgm,,,1,0,5,-1\n");  // label_r given, side absent
        CHECK_THROWS_AS(data::ingest(td.path, 8), DataError);
        write_manifest("x,x_lcc.pgm,x_lmlo.pgm,,,-1,-1,5,-1\n");  // label_l missing, side present
        CHECK_THROWS_AS(data::ingest(td.path, 8), DataError);
    }

    SUBCASE("duplicate study ids are rejected") {
        write_manifest("x,x_lcc.pgm,x_lmlo.pgm,,,1,-1,5,-1\nx,x_lcc.pgm,x_lmlo.pgm,,,1,-1,5,-1\n");
        CHECK_THROWS_WITH_AS(data::ingest(td.path, 8), doctest::Contains("duplicate"), DataError);
    }

    SUBCASE("wrong header is rejected") {
        std::ofstream f(td.path / data::kManifestName);
        f << "id,a,b\n";
        f.close();
        CHECK_THROWS_AS(data::ingest(td.path, 8), DataError);
    }
}

TEST_CASE("patient-level split is disjoint, sized 80/20, and deterministic") {
    for (std::size_t n : {10ul, 101ul, 400ul}) {
        auto [train, val] = data::split_dataset(n, 0.8, 42);
        CHECK(train.size() + val.size() == n);
        const double want = 0.8 * double(n);
        CHECK(std::abs(double(train.size()) - want) <= 1.0);
        std::set<std::size_t> seen(train.begin(), train.end());
        for (std::size_t i : val) CHECK(seen.insert(i).second);
        CHECK(seen.size() == n);

        auto [train2, val2] = data::split_dataset(n, 0.8, 42);
        CHECK(train == train2);
        auto [train3, val3] = data::split_dataset(n, 0.8, 43);
        if (n > 10) CHECK(train != train3);
    }
    CHECK_THROWS_AS(data::split_dataset(10, 0.0, 1), ConfigError);
}

TEST_CASE("batch assembly re-indexes grades and keys augmentation by study") {
    data::SyntheticSpec spec;
    spec.image_size = 16;
    spec.seed = 5;
    spec.grades = {1, 5};
    spec.missing_side_prob = 0.4;
    auto ds = data::generate_synthetic(spec, 6);

    model::ModelConfig cfg;
    cfg.image_size = 16;
    cfg.birads_classes = {1, 5};

    auto batch = data::make_batch<float>(ds, {0, 1, 2, 3, 4, 5}, cfg, /*train=*/false, 11, 0);
    CHECK(batch.size() == 6);
    for (std::size_t v = 0; v < 4; ++v)
        CHECK(batch.images[v].shape() == Tensor<float>::Shape{6, 3, 16, 16});
    for (std::size_t b = 0; b < 6; ++b) {
        const int raw = ds[b].labels.birads_l;
        const int idx = batch.labels.birads_l[b];
        if (raw == -1) CHECK(idx == -1);
        if (raw == 1) CHECK(idx == 0);
        if (raw == 5) CHECK(idx == 1);
        // Absent views became zero image planes.
        if (!ds[b].presence[2]) {
            const float* p = batch.images[2].data() + b * 3 * 16 * 16;
            for (std::size_t i = 0; i < 3 * 16 * 16; ++i) CHECK(p[i] == 0.0f);
        }
    }

    SUBCASE("augmented batches are study-keyed, not position-keyed") {
        auto b1 = data::make_batch<float>(ds, {0, 1}, cfg, /*train=*/true, 11, 3);
        auto b2 = data::make_batch<float>(ds, {1, 0}, cfg, /*train=*/true, 11, 3);
        const std::size_t plane = 3 * 16 * 16;
        for (std::size_t v = 0; v < 4; ++v) {
            CHECK(testutil::max_abs_diff(b1.images[v].data(), b2.images[v].data() + plane,
                                         plane) == 0.0);
            CHECK(testutil::max_abs_diff(b1.images[v].data() + plane, b2.images[v].data(),
                                         plane) == 0.0);
        }
    }

    SUBCASE("a different epoch produces different augmentations") {
        auto b1 = data::make_batch<float>(ds, {0}, cfg, true, 11, 0);
        auto b2 = data::make_batch<float>(ds, {0}, cfg, true, 11, 1);
        CHECK(testutil::max_abs_diff(b1.images[0].data(), b2.images[0].data(),
                                     b1.images[0].size()) > 0.0);
    }

    SUBCASE("grades outside the active set are a data error") {
        data::SyntheticSpec wide = spec;
        wide.grades = {1, 3, 5};
        wide.missing_side_prob = 0.0;
        auto wds = data::generate_synthetic(wide, 12);
        bool has3 = false;
        for (const auto& s : wds)
            has3 |= s.labels.birads_l == 3 || s.labels.birads_r == 3;
        REQUIRE(has3);
        std::vector<std::size_t> all(wds.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        CHECK_THROWS_AS(data::make_batch<float>(wds, all, cfg, false, 1, 0), DataError);
    }
}
