#include "celladapt/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <omp.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "celladapt/errors.hpp"

namespace fs = std::filesystem;

namespace celladapt {

SplitEvaluation evaluate_model(const DetectorModel& model,
                               std::span<const PatchSample> test_split,
                               const ShadowAnnotations& shadow, float d_match, float th_d,
                               int nms_radius, int patch_size) {
    if (test_split.empty())
        throw std::invalid_argument("evaluate_model: empty test split");
    if (shadow.empty())
        throw DataError("evaluate_model: missing shadow ground truth");

    const int n = static_cast<int>(test_split.size());
    std::vector<MatchReport> reports(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const PatchSample& s = test_split[static_cast<std::size_t>(i)];
        const std::vector<Point> pred =
            predict_full_image(model, s.image, th_d, nms_radius, patch_size);
        auto it = shadow.find(s.id);
        const std::vector<Point> empty;
        const std::vector<Point>& gt = it != shadow.end() ? it->second : empty;
        reports[static_cast<std::size_t>(i)] = match_detections(pred, gt, d_match);
    }

    SplitEvaluation ev;
    ev.images = n;
    for (const MatchReport& r : reports) {
        ev.aggregate.tp += r.tp;
        ev.aggregate.fp += r.fp;
        ev.aggregate.fn += r.fn;
    }
    finalize_rates(ev.aggregate);
    return ev;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

void write_report_csv(std::span<const IterationMetrics> rows, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path);
    out << "iteration,f_source,f_target,precision_target,recall_target,n_selected\n";
    for (const IterationMetrics& m : rows)
        out << m.iteration << ',' << fmt(m.f_source) << ',' << fmt(m.f_target) << ','
            << fmt(m.precision_target) << ',' << fmt(m.recall_target) << ',' << m.n_selected
            << '\n';
}

std::vector<IterationMetrics> read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path);
    std::vector<IterationMetrics> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6)
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed row");
        IterationMetrics m;
        m.iteration = std::stoi(f[0]);
        m.f_source = std::stod(f[1]);
        m.f_target = std::stod(f[2]);
        m.precision_target = std::stod(f[3]);
        m.recall_target = std::stod(f[4]);
        m.n_selected = std::stoi(f[5]);
        rows.push_back(m);
    }
    return rows;
}

void write_features_csv(std::span<const FeatureRow> rows, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path);
    out << "id,selected_iteration,feature\n";
    for (const FeatureRow& r : rows) {
        out << r.id << ',' << r.selected_iteration << ',';
        for (std::size_t i = 0; i < r.feature.size(); ++i) {
            if (i) out << ';';
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(r.feature[i]));
            out << buf;
        }
        out << '\n';
    }
}

std::vector<FeatureRow> read_features_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open " + path);
    std::vector<FeatureRow> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3)
            throw DataError(path + ":" + std::to_string(lineno) + ": malformed row");
        FeatureRow r;
        r.id = f[0];
        r.selected_iteration = std::stoi(f[1]);
        std::stringstream fs_(f[2]);
        std::string tok;
        while (std::getline(fs_, tok, ';'))
            r.feature.push_back(std::stof(tok));
        rows.push_back(std::move(r));
    }
    return rows;
}

RunReport load_run_report(const std::string& run_dir) {
    RunReport rep;
    rep.run_dir = run_dir;
    rep.rows = read_report_csv((fs::path(run_dir) / "report.csv").string());
    const std::string feat = (fs::path(run_dir) / "features.csv").string();
    if (fs::exists(feat)) rep.features = read_features_csv(feat);
    return rep;
}

namespace {

cv::Scalar iteration_color(int selected_iteration) {
    // BGR. Labeled source red; unselected black; iterations follow the
    // orange / purple / blue / magenta sequence.
    switch (selected_iteration) {
    case -2: return {0, 0, 220};
    case -1: return {40, 40, 40};
    case 0: return {0, 140, 255};
    case 1: return {200, 0, 128};
    case 2: return {255, 80, 0};
    default: return {255, 0, 255};
    }
}

void draw_f_curve(const std::vector<IterationMetrics>& rows, const std::string& path) {
    const int W = 640, H = 480, L = 70, B = 60, T = 30, R = 30;
    cv::Mat canvas(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

    const int n = static_cast<int>(rows.size());
    auto map_pt = [&](int i, double f) {
        const double x = n > 1 ? static_cast<double>(i) / (n - 1) : 0.5;
        return cv::Point(L + static_cast<int>(x * (W - L - R)),
                         H - B - static_cast<int>(f * (H - T - B)));
    };

    cv::rectangle(canvas, {L, T}, {W - R, H - B}, {0, 0, 0});
    for (int g = 0; g <= 10; g += 2) {
        const int y = H - B - g * (H - T - B) / 10;
        cv::line(canvas, {L - 4, y}, {L, y}, {0, 0, 0});
        cv::putText(canvas, fmt(g / 10.0).substr(0, 3), {L - 45, y + 5},
                    cv::FONT_HERSHEY_SIMPLEX, 0.45, {0, 0, 0});
    }
    for (int i = 0; i < n; ++i) {
        const cv::Point p = map_pt(i, 0.0);
        cv::putText(canvas, std::to_string(rows[static_cast<std::size_t>(i)].iteration),
                    {p.x - 4, H - B + 25}, cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0});
    }
    cv::putText(canvas, "iteration", {W / 2 - 40, H - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.55,
                {0, 0, 0});
    cv::putText(canvas, "F-score", {10, T - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.55, {0, 0, 0});

    for (int i = 0; i + 1 < n; ++i) {
        cv::line(canvas, map_pt(i, rows[static_cast<std::size_t>(i)].f_source),
                 map_pt(i + 1, rows[static_cast<std::size_t>(i) + 1].f_source), {180, 120, 0}, 2);
        cv::line(canvas, map_pt(i, rows[static_cast<std::size_t>(i)].f_target),
                 map_pt(i + 1, rows[static_cast<std::size_t>(i) + 1].f_target), {0, 0, 220}, 2);
    }
    for (int i = 0; i < n; ++i) {
        cv::circle(canvas, map_pt(i, rows[static_cast<std::size_t>(i)].f_source), 3,
                   {180, 120, 0}, cv::FILLED);
        cv::circle(canvas, map_pt(i, rows[static_cast<std::size_t>(i)].f_target), 3, {0, 0, 220},
                   cv::FILLED);
    }
    cv::putText(canvas, "source", {W - 150, T + 25}, cv::FONT_HERSHEY_SIMPLEX, 0.55,
                {180, 120, 0}, 2);
    cv::putText(canvas, "target", {W - 150, T + 50}, cv::FONT_HERSHEY_SIMPLEX, 0.55, {0, 0, 220},
                2);

    if (!cv::imwrite(path, canvas))
        throw DataError("cannot write plot: " + path);
}

void draw_scatter(const std::vector<FeatureRow>& rows, const std::string& path) {
    if (rows.empty()) return;
    const int D = static_cast<int>(rows[0].feature.size());
    const int N = static_cast<int>(rows.size());

    Eigen::MatrixXd X(N, D);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < D; ++j)
            X(i, j) = static_cast<double>(rows[static_cast<std::size_t>(i)]
                                              .feature[static_cast<std::size_t>(j)]);
    const Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;

    // Deterministic linear projection onto the top-2 principal directions.
    Eigen::MatrixXd cov = X.transpose() * X / std::max(1, N - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd v1 = es.eigenvectors().col(D - 1);
    Eigen::VectorXd v2 = Eigen::VectorXd::Zero(D);
    if (D > 1) v2 = es.eigenvectors().col(D - 2);
    // Fix the sign convention so reruns produce identical plots.
    int m1, m2;
    v1.cwiseAbs().maxCoeff(&m1);
    if (v1(m1) < 0) v1 = -v1;
    v2.cwiseAbs().maxCoeff(&m2);
    if (v2(m2) < 0) v2 = -v2;

    Eigen::VectorXd px = X * v1, py = X * v2;
    const double x0 = px.minCoeff(), x1 = px.maxCoeff();
    const double y0 = py.minCoeff(), y1 = py.maxCoeff();
    const double sx = x1 > x0 ? 1.0 / (x1 - x0) : 0.0;
    const double sy = y1 > y0 ? 1.0 / (y1 - y0) : 0.0;

    const int W = 720, H = 720, M = 50;
    cv::Mat canvas(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    cv::rectangle(canvas, {M, M}, {W - M, H - M}, {0, 0, 0});
    for (int i = 0; i < N; ++i) {
        const int cx = M + static_cast<int>((px(i) - x0) * sx * (W - 2 * M));
        const int cy = H - M - static_cast<int>((py(i) - y0) * sy * (H - 2 * M));
        cv::circle(canvas, {cx, cy}, 3,
                   iteration_color(rows[static_cast<std::size_t>(i)].selected_iteration),
                   cv::FILLED);
    }
    const char* labels[6] = {"source", "unselected", "iter 0", "iter 1", "iter 2", "iter 3"};
    const int keys[6] = {-2, -1, 0, 1, 2, 3};
    for (int i = 0; i < 6; ++i) {
        cv::circle(canvas, {M + 10 + 110 * i, 25}, 4, iteration_color(keys[i]), cv::FILLED);
        cv::putText(canvas, labels[i], {M + 20 + 110 * i, 30}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                    {0, 0, 0});
    }
    if (!cv::imwrite(path, canvas))
        throw DataError("cannot write plot: " + path);
}

cv::Mat image_to_mat(const Image& img) {
    cv::Mat m(img.height, img.width, CV_8UC1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            m.at<unsigned char>(y, x) = static_cast<unsigned char>(
                std::clamp(std::lround(img.at(y, x)), 0L, 255L));
    return m;
}

} // namespace

void emit_report(const RunReport& report, const std::string& out_dir) {
    fs::create_directories(out_dir);
    if (!fs::exists(fs::status(out_dir)) || !fs::is_directory(out_dir))
        throw DataError("emit_report: cannot create directory " + out_dir);

    write_report_csv(report.rows, (fs::path(out_dir) / "report.csv").string());
    draw_f_curve(report.rows, (fs::path(out_dir) / "fscore_curve.png").string());
    if (!report.features.empty()) {
        write_features_csv(report.features, (fs::path(out_dir) / "features.csv").string());
        draw_scatter(report.features, (fs::path(out_dir) / "feature_scatter.png").string());
    }
    for (const TriptychSample& t : report.triptychs) {
        cv::Mat row;
        cv::Mat parts[3] = {image_to_mat(t.image), image_to_mat(t.predicted),
                            image_to_mat(t.pseudo)};
        cv::hconcat(parts, 3, row);
        const std::string name =
            "triptych_iter" + std::to_string(t.iteration) + "_" + t.id + ".png";
        if (!cv::imwrite((fs::path(out_dir) / name).string(), row))
            throw DataError("cannot write triptych: " + name);
    }
}

} // namespace celladapt
