#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "celladapt/errors.hpp"
#include "celladapt/synth.hpp"

using namespace celladapt;
namespace fsys = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    const std::string dir = (fsys::temp_directory_path() / name).string();
    fsys::remove_all(dir);
    fsys::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("render_patch: deterministic, bounded, quantized, points inside") {
    const DomainParams p = source_domain_defaults();
    const RenderedPatch a = render_patch(p, 128, 128, 42);
    const RenderedPatch b = render_patch(p, 128, 128, 42);
    CHECK(a.image == b.image);
    CHECK(a.points == b.points);

    const RenderedPatch c = render_patch(p, 128, 128, 43);
    CHECK(a.image.data != c.image.data);

    for (float v : a.image.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 255.0f);
        CHECK(v == std::floor(v));
    }
    for (const Point& q : a.points) {
        CHECK(q.x >= 0.0f);
        CHECK(q.x < 128.0f);
        CHECK(q.y >= 0.0f);
        CHECK(q.y < 128.0f);
    }
}

TEST_CASE("render_patch: vanishing density gives an empty scene") {
    DomainParams p = source_domain_defaults();
    p.density = 1e-6f;
    const RenderedPatch r = render_patch(p, 128, 128, 1);
    CHECK(r.points.empty());
}

TEST_CASE("render_patch: unit eccentricity renders circles") {
    DomainParams p = source_domain_defaults();
    p.ecc_min = 1.0f;
    p.ecc_max = 1.0f;
    p.density = 8.0f;
    const RenderedPatch r = render_patch(p, 128, 128, 3);
    REQUIRE(!r.cells.empty());
    for (const EllipseCell& c : r.cells) CHECK(c.axis_ratio == doctest::Approx(1.0));
}

TEST_CASE("render_patch: rejects invalid parameters") {
    DomainParams p = source_domain_defaults();
    p.ecc_min = 0.5f;
    CHECK_THROWS_AS(render_patch(p, 128, 128, 1), std::invalid_argument);
    p = source_domain_defaults();
    p.density = 0.0f;
    CHECK_THROWS_AS(render_patch(p, 128, 128, 1), std::invalid_argument);
    p = source_domain_defaults();
    p.noise_std = -1.0f;
    CHECK_THROWS_AS(render_patch(p, 128, 128, 1), std::invalid_argument);
}

TEST_CASE("domain separation: source and target pools differ in axis ratio") {
    const DomainParams src = source_domain_defaults();
    const DomainParams tgt = target_domain_defaults();
    double mean_src = 0.0, mean_tgt = 0.0;
    int n_src = 0, n_tgt = 0;
    for (int i = 0; i < 40; ++i) {
        for (const EllipseCell& c : render_patch(src, 128, 128, 1000 + i).cells) {
            mean_src += c.axis_ratio;
            ++n_src;
        }
        for (const EllipseCell& c : render_patch(tgt, 128, 128, 2000 + i).cells) {
            mean_tgt += c.axis_ratio;
            ++n_tgt;
        }
    }
    mean_src /= n_src;
    mean_tgt /= n_tgt;
    CHECK(mean_tgt - mean_src > 1.0);
}

TEST_CASE("normalize_image: affine rescale with the degenerate convention") {
    Image constant(8, 8, 7.0f);
    const Image z = normalize_image(constant);
    CHECK(*std::max_element(z.data.begin(), z.data.end()) == 0.0f);

    Image img(2, 2);
    img.at(0, 0) = 10.0f;
    img.at(0, 1) = 110.0f;
    img.at(1, 0) = 60.0f;
    img.at(1, 1) = 35.0f;
    const Image n = normalize_image(img);
    CHECK(n.at(0, 0) == doctest::Approx(0.0));
    CHECK(n.at(0, 1) == doctest::Approx(255.0));
    CHECK(n.at(1, 0) == doctest::Approx(127.5));

    Image full(2, 2);
    full.at(0, 0) = 0.0f;
    full.at(0, 1) = 255.0f;
    full.at(1, 0) = 100.0f;
    full.at(1, 1) = 200.0f;
    const Image same = normalize_image(full);
    CHECK(same == full);
}

TEST_CASE("extract_patches: tiling arithmetic and point assignment") {
    Image img128(128, 128, 1.0f);
    const std::vector<Point> pts{{3, 4}};
    const auto one = extract_patches(img128, pts, 128, 128);
    REQUIRE(one.size() == 1);
    CHECK(one[0].image == img128);
    CHECK(*one[0].points == pts);

    Image img256(256, 256, 0.0f);
    const std::vector<Point> p2{{130, 20}};
    const auto four = extract_patches(img256, p2, 128, 128, "t");
    REQUIRE(four.size() == 4);
    int with_points = 0;
    for (const PatchSample& s : four) {
        if (!s.points->empty()) {
            ++with_points;
            CHECK(s.id == "t_y0_x128");
            CHECK((*s.points)[0] == Point{2, 20});
        }
    }
    CHECK(with_points == 1);

    Image img200(200, 200, 0.0f);
    const auto tiles = extract_patches(img200, {}, 128, 128, "e");
    REQUIRE(tiles.size() == 4);
    CHECK(tiles[0].id == "e_y0_x0");
    CHECK(tiles[1].id == "e_y0_x72");
    CHECK(tiles[2].id == "e_y72_x0");
    CHECK(tiles[3].id == "e_y72_x72");

    Image small(100, 100, 0.0f);
    CHECK_THROWS_AS(extract_patches(small, {}, 128, 128), std::invalid_argument);
}

TEST_CASE("generate_dataset: counts, split disjointness, determinism") {
    SynthConfig cfg;
    cfg.counts = {24, 30, 2, 2};
    cfg.test_image_size = 256;
    const GeneratedDataSet a = generate_dataset(cfg, 7);
    CHECK(a.data.manifest.labeled_source.size() == 24);
    CHECK(a.data.manifest.unlabeled_target.size() == 30);
    CHECK(a.data.manifest.test_source.size() == 2);
    CHECK(a.data.manifest.test_target.size() == 2);
    CHECK(a.data.samples.size() == 24 + 30 + 4);

    std::set<std::string> all;
    for (const PatchSample& s : a.data.samples) CHECK(all.insert(s.id).second);

    for (const PatchSample& s : a.data.samples) {
        if (s.provenance == Provenance::LabeledSource)
            CHECK(s.points.has_value());
        else
            CHECK(!s.points.has_value());
    }
    // Ground truth for unlabeled and test samples lives only in the shadow.
    CHECK(a.shadow.size() == 30 + 4);

    const GeneratedDataSet b = generate_dataset(cfg, 7);
    CHECK(a.data.manifest.labeled_source == b.data.manifest.labeled_source);
    for (std::size_t i = 0; i < a.data.samples.size(); ++i)
        CHECK(a.data.samples[i].image == b.data.samples[i].image);

    SynthConfig zero;
    zero.counts = {0, 0, 0, 0};
    const GeneratedDataSet empty = generate_dataset(zero, 1);
    CHECK(empty.data.samples.empty());
    CHECK(empty.data.manifest.labeled_source.empty());
}

TEST_CASE("save/load dataset: lossless round trip") {
    const std::string dir = fresh_dir("celladapt_ds_roundtrip");
    SynthConfig cfg;
    cfg.counts = {4, 3, 1, 1};
    cfg.test_image_size = 160;
    const GeneratedDataSet gen = generate_dataset(cfg, 11);
    save_dataset(gen.data, gen.shadow, dir);

    const DataSet back = load_dataset(dir);
    REQUIRE(back.samples.size() == gen.data.samples.size());
    CHECK(back.manifest.labeled_source == gen.data.manifest.labeled_source);
    CHECK(back.manifest.unlabeled_target == gen.data.manifest.unlabeled_target);
    CHECK(back.manifest.test_source == gen.data.manifest.test_source);
    CHECK(back.manifest.test_target == gen.data.manifest.test_target);
    for (const PatchSample& s : gen.data.samples) {
        const PatchSample& r = back.by_id(s.id);
        CHECK(r.image == s.image);
        CHECK(r.points == s.points);
        CHECK(r.domain == s.domain);
    }
    const ShadowAnnotations shadow = load_shadow(dir);
    for (const auto& [id, pts] : gen.shadow) {
        if (pts.empty()) continue; // empty scenes have no rows
        REQUIRE(shadow.count(id) == 1);
        CHECK(shadow.at(id) == pts);
    }
}

TEST_CASE("load_dataset: forced error paths name the problem") {
    const std::string dir = fresh_dir("celladapt_ds_errors");
    SynthConfig cfg;
    cfg.counts = {2, 1, 1, 1};
    cfg.test_image_size = 128;
    const GeneratedDataSet gen = generate_dataset(cfg, 13);
    save_dataset(gen.data, gen.shadow, dir);

    SUBCASE("missing image file") {
        fsys::remove(fsys::path(dir) / "images" / "source_labeled_0001.png");
        CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("source_labeled_0001"),
                             DataError);
    }
    SUBCASE("malformed annotation row") {
        std::ofstream out(fsys::path(dir) / "annotations.csv", std::ios::app);
        out << "source_labeled_0000,12\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("malformed"), DataError);
    }
    SUBCASE("annotation out of bounds names the line") {
        std::ofstream out(fsys::path(dir) / "annotations.csv", std::ios::app);
        out << "source_labeled_0000,500,10\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("outside image"), DataError);
    }
    SUBCASE("duplicate manifest id") {
        std::ofstream out(fsys::path(dir) / "manifest.txt", std::ios::app);
        out << "source_labeled_0000\n";
        out.close();
        CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("duplicate"), DataError);
    }
    SUBCASE("missing shadow file") {
        fsys::remove(fsys::path(dir) / "shadow_annotations.csv");
        CHECK_THROWS_AS(load_shadow(dir), DataError);
    }
}
