#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "celladapt/geometry.hpp"
#include "celladapt/image.hpp"

namespace celladapt {

enum class Provenance { LabeledSource, UnlabeledTarget, Pseudo, Test };

std::string to_string(Provenance p);

/// One image with (optionally) visible point annotations. Training patches
/// are patch_size x patch_size; test entries are entire images.
struct PatchSample {
    std::string id;
    Image image; // values in [0, 255]
    std::optional<std::vector<Point>> points;
    std::string domain;
    Provenance provenance = Provenance::UnlabeledTarget;
};

struct SplitManifest {
    std::vector<std::string> labeled_source;
    std::vector<std::string> unlabeled_target;
    std::vector<std::string> test_source;
    std::vector<std::string> test_target;
};

/// Held-back ground truth for nominally unlabeled and test samples.
/// Only evaluation code may touch this.
using ShadowAnnotations = std::map<std::string, std::vector<Point>>;

struct DataSet {
    std::vector<PatchSample> samples;
    SplitManifest manifest;

    const PatchSample& by_id(const std::string& id) const;
    bool has_id(const std::string& id) const;
};

/// Annotation CSV: header `patch_id,x,y`, one row per point.
void write_annotations_csv(const std::string& path,
                           const std::map<std::string, std::vector<Point>>& points_by_id);
std::map<std::string, std::vector<Point>> read_annotations_csv(const std::string& path);

/// Tile origins along one dimension: multiples of stride, plus a final
/// edge-aligned origin when a remainder would otherwise be uncovered.
std::vector<int> tile_starts(int dim, int patch_size, int stride);

/// Tiles an image with the given stride; a right/bottom remainder is covered
/// by a final tile aligned to the image edge. Points are assigned to every
/// tile they fall inside, translated to tile coordinates.
std::vector<PatchSample> extract_patches(const Image& image, std::span<const Point> points,
                                         int patch_size, int stride,
                                         const std::string& id_prefix = "patch");

/// Directory layout: manifest.txt, images/<id>.png, annotations.csv,
/// shadow_annotations.csv. Round-trips losslessly.
void save_dataset(const DataSet& ds, const ShadowAnnotations& shadow, const std::string& dir);
DataSet load_dataset(const std::string& dir);
ShadowAnnotations load_shadow(const std::string& dir);

} // namespace celladapt
