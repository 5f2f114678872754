#include "celladapt/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "celladapt/errors.hpp"

namespace fs = std::filesystem;

namespace celladapt {

std::string to_string(Provenance p) {
    switch (p) {
    case Provenance::LabeledSource: return "labeled-source";
    case Provenance::UnlabeledTarget: return "unlabeled-target";
    case Provenance::Pseudo: return "pseudo";
    case Provenance::Test: return "test";
    }
    return "?";
}

const PatchSample& DataSet::by_id(const std::string& id) const {
    for (const PatchSample& s : samples)
        if (s.id == id) return s;
    throw DataError("no sample with id '" + id + "'");
}

bool DataSet::has_id(const std::string& id) const {
    for (const PatchSample& s : samples)
        if (s.id == id) return true;
    return false;
}

namespace {

std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

struct AnnotationRow {
    std::string id;
    float x = 0, y = 0;
    int line = 0;
};

std::vector<AnnotationRow> read_annotation_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open annotation file: " + path);
    std::vector<AnnotationRow> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1) {
            if (line != "patch_id,x,y")
                throw DataError(path + ":1: expected header 'patch_id,x,y', got '" + line + "'");
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos ||
            line.find(',', c2 + 1) != std::string::npos)
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
        AnnotationRow row;
        row.id = line.substr(0, c1);
        row.line = lineno;
        try {
            std::size_t used = 0;
            const std::string xs = line.substr(c1 + 1, c2 - c1 - 1);
            row.x = std::stof(xs, &used);
            if (used != xs.size()) throw std::invalid_argument(xs);
            const std::string ys = line.substr(c2 + 1);
            row.y = std::stof(ys, &used);
            if (used != ys.size()) throw std::invalid_argument(ys);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(lineno) + ": non-numeric coordinate in '" +
                            line + "'");
        }
        if (row.id.empty())
            throw DataError(path + ":" + std::to_string(lineno) + ": empty patch_id");
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

void write_annotations_csv(const std::string& path,
                           const std::map<std::string, std::vector<Point>>& points_by_id) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write annotation file: " + path);
    out << "patch_id,x,y\n";
    for (const auto& [id, pts] : points_by_id)
        for (const Point& p : pts)
            out << id << ',' << format_float(p.x) << ',' << format_float(p.y) << '\n';
}

std::map<std::string, std::vector<Point>> read_annotations_csv(const std::string& path) {
    std::map<std::string, std::vector<Point>> out;
    for (const AnnotationRow& r : read_annotation_rows(path))
        out[r.id].push_back({r.x, r.y});
    return out;
}

std::vector<int> tile_starts(int dim, int patch_size, int stride) {
    std::vector<int> o;
    for (int v = 0; v + patch_size <= dim; v += stride) o.push_back(v);
    if (o.empty() || o.back() + patch_size != dim) o.push_back(dim - patch_size);
    return o;
}

std::vector<PatchSample> extract_patches(const Image& image, std::span<const Point> points,
                                         int patch_size, int stride,
                                         const std::string& id_prefix) {
    if (patch_size <= 0)
        throw std::invalid_argument("extract_patches: patch_size must be positive");
    if (stride <= 0)
        throw std::invalid_argument("extract_patches: stride must be positive");
    if (image.height < patch_size || image.width < patch_size)
        throw std::invalid_argument("extract_patches: image " + std::to_string(image.width) + "x" +
                                    std::to_string(image.height) + " smaller than patch size " +
                                    std::to_string(patch_size));

    std::vector<PatchSample> out;
    for (int y0 : tile_starts(image.height, patch_size, stride)) {
        for (int x0 : tile_starts(image.width, patch_size, stride)) {
            PatchSample p;
            p.id = id_prefix + "_y" + std::to_string(y0) + "_x" + std::to_string(x0);
            p.image = Image(patch_size, patch_size);
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    p.image.at(y, x) = image.at(y0 + y, x0 + x);
            std::vector<Point> pts;
            for (const Point& g : points) {
                if (g.x >= static_cast<float>(x0) && g.x < static_cast<float>(x0 + patch_size) &&
                    g.y >= static_cast<float>(y0) && g.y < static_cast<float>(y0 + patch_size))
                    pts.push_back({g.x - static_cast<float>(x0), g.y - static_cast<float>(y0)});
            }
            p.points = std::move(pts);
            out.push_back(std::move(p));
        }
    }
    return out;
}

namespace {

const char* kSectionNames[4] = {"[labeled-source]", "[unlabeled-target]", "[test-source]",
                                "[test-target]"};

void write_manifest(const SplitManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write manifest: " + path);
    const std::vector<std::string>* splits[4] = {&m.labeled_source, &m.unlabeled_target,
                                                 &m.test_source, &m.test_target};
    for (int s = 0; s < 4; ++s) {
        out << kSectionNames[s] << '\n';
        for (const std::string& id : *splits[s]) out << id << '\n';
    }
}

SplitManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open manifest: " + path);
    SplitManifest m;
    std::vector<std::string>* splits[4] = {&m.labeled_source, &m.unlabeled_target,
                                           &m.test_source, &m.test_target};
    std::vector<std::string>* current = nullptr;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '[') {
            current = nullptr;
            for (int s = 0; s < 4; ++s)
                if (line == kSectionNames[s]) current = splits[s];
            if (!current)
                throw DataError(path + ":" + std::to_string(lineno) + ": unknown section " + line);
            continue;
        }
        if (!current)
            throw DataError(path + ":" + std::to_string(lineno) + ": id before any section");
        if (!seen.insert(line).second)
            throw DataError(path + ":" + std::to_string(lineno) + ": duplicate id '" + line + "'");
        current->push_back(line);
    }
    return m;
}

} // namespace

void save_dataset(const DataSet& ds, const ShadowAnnotations& shadow, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    write_manifest(ds.manifest, (fs::path(dir) / "manifest.txt").string());

    std::map<std::string, std::vector<Point>> visible;
    for (const PatchSample& s : ds.samples) {
        save_image_u8(s.image, (fs::path(dir) / "images" / (s.id + ".png")).string());
        if (s.points.has_value())
            visible[s.id] = *s.points;
    }
    write_annotations_csv((fs::path(dir) / "annotations.csv").string(), visible);

    std::map<std::string, std::vector<Point>> shadow_map(shadow.begin(), shadow.end());
    write_annotations_csv((fs::path(dir) / "shadow_annotations.csv").string(), shadow_map);
}

DataSet load_dataset(const std::string& dir) {
    DataSet ds;
    ds.manifest = read_manifest((fs::path(dir) / "manifest.txt").string());

    const std::string ann_path = (fs::path(dir) / "annotations.csv").string();
    std::vector<AnnotationRow> rows;
    if (fs::exists(ann_path)) rows = read_annotation_rows(ann_path);

    std::set<std::string> labeled_ids(ds.manifest.labeled_source.begin(),
                                      ds.manifest.labeled_source.end());
    std::map<std::string, std::vector<Point>> visible;
    for (const AnnotationRow& r : rows) {
        if (!labeled_ids.count(r.id))
            throw DataError(ann_path + ":" + std::to_string(r.line) + ": annotation for '" +
                            r.id + "' which is not in the labeled-source split");
        visible[r.id].push_back({r.x, r.y});
    }

    struct SplitInfo {
        const std::vector<std::string>* ids;
        Provenance prov;
        const char* domain;
    };
    const SplitInfo splits[4] = {
        {&ds.manifest.labeled_source, Provenance::LabeledSource, "source"},
        {&ds.manifest.unlabeled_target, Provenance::UnlabeledTarget, "target"},
        {&ds.manifest.test_source, Provenance::Test, "source"},
        {&ds.manifest.test_target, Provenance::Test, "target"},
    };
    for (const SplitInfo& split : splits) {
        for (const std::string& id : *split.ids) {
            const std::string img_path = (fs::path(dir) / "images" / (id + ".png")).string();
            if (!fs::exists(img_path))
                throw DataError("manifest references missing image for id '" + id + "' (" +
                                img_path + ")");
            PatchSample s;
            s.id = id;
            s.image = load_image_u8(img_path);
            s.domain = split.domain;
            s.provenance = split.prov;
            if (split.prov == Provenance::LabeledSource) {
                auto it = visible.find(id);
                s.points = it != visible.end() ? it->second : std::vector<Point>{};
            }
            ds.samples.push_back(std::move(s));
        }
    }

    // Bounds checks need image shapes, so they run after the images load.
    std::map<std::string, const PatchSample*> index;
    for (const PatchSample& s : ds.samples) index[s.id] = &s;
    for (const AnnotationRow& r : rows) {
        const PatchSample* s = index.at(r.id);
        if (r.x < 0.0f || r.x >= static_cast<float>(s->image.width) || r.y < 0.0f ||
            r.y >= static_cast<float>(s->image.height))
            throw DataError(ann_path + ":" + std::to_string(r.line) + ": point (" +
                            std::to_string(r.x) + ", " + std::to_string(r.y) +
                            ") outside image '" + r.id + "' of size " +
                            std::to_string(s->image.width) + "x" +
                            std::to_string(s->image.height));
    }
    return ds;
}

ShadowAnnotations load_shadow(const std::string& dir) {
    const std::string path = (fs::path(dir) / "shadow_annotations.csv").string();
    if (!fs::exists(path))
        throw DataError("no shadow ground truth at " + path);
    auto m = read_annotations_csv(path);
    return {m.begin(), m.end()};
}

} // namespace celladapt
