#include "vsmk/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

namespace vsmk::data {

namespace fs = std::filesystem;

namespace {

void require_image(const Tensor<float>& img, const char* who) {
    if (img.rank() != 2 || img.size() == 0)
        throw ShapeError(std::string(who) + ": expected a non-empty [H, W] image, got " +
                         img.shape_str());
}

float bilinear_at(const Tensor<float>& img, double sy, double sx, bool zero_fill) {
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(img.shape(0));
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(img.shape(1));
    const double fy = std::floor(sy), fx = std::floor(sx);
    const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(fy);
    const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(fx);
    const double wy1 = sy - fy, wx1 = sx - fx;
    const double wy0 = 1.0 - wy1, wx0 = 1.0 - wx1;
    auto sample = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
        if (y < 0 || y >= H || x < 0 || x >= W) {
            if (zero_fill) return 0.0;
            y = std::clamp<std::ptrdiff_t>(y, 0, H - 1);
            x = std::clamp<std::ptrdiff_t>(x, 0, W - 1);
        }
        return img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    return static_cast<float>(wy0 * (wx0 * sample(y0, x0) + wx1 * sample(y0, x0 + 1)) +
                              wy1 * (wx0 * sample(y0 + 1, x0) + wx1 * sample(y0 + 1, x0 + 1)));
}

Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t oh, std::size_t ow) {
    const double sy = static_cast<double>(img.shape(0)) / static_cast<double>(oh);
    const double sx = static_cast<double>(img.shape(1)) / static_cast<double>(ow);
    Tensor<float> out({oh, ow});
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x)
            out.at(y, x) = bilinear_at(img, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5,
                                       /*zero_fill=*/false);
    return out;
}

// Fractional-coverage box average: output pixel (y, x) integrates the source
// box [y*sy, (y+1)*sy) x [x*sx, (x+1)*sx).
Tensor<float> resize_area(const Tensor<float>& img, std::size_t oh, std::size_t ow) {
    const std::size_t H = img.shape(0), W = img.shape(1);
    const double sy = static_cast<double>(H) / static_cast<double>(oh);
    const double sx = static_cast<double>(W) / static_cast<double>(ow);
    Tensor<float> out({oh, ow});
    for (std::size_t y = 0; y < oh; ++y) {
        const double y0 = y * sy, y1 = (y + 1) * sy;
        const std::size_t iy0 = static_cast<std::size_t>(std::floor(y0));
        const std::size_t iy1 = std::min(H, static_cast<std::size_t>(std::ceil(y1)));
        for (std::size_t x = 0; x < ow; ++x) {
            const double x0 = x * sx, x1 = (x + 1) * sx;
            const std::size_t ix0 = static_cast<std::size_t>(std::floor(x0));
            const std::size_t ix1 = std::min(W, static_cast<std::size_t>(std::ceil(x1)));
            double acc = 0.0, area = 0.0;
            for (std::size_t iy = iy0; iy < iy1; ++iy) {
                const double hy = std::min<double>(iy + 1.0, y1) - std::max<double>(iy, y0);
                for (std::size_t ix = ix0; ix < ix1; ++ix) {
                    const double hx = std::min<double>(ix + 1.0, x1) - std::max<double>(ix, x0);
                    acc += hy * hx * img.at(iy, ix);
                    area += hy * hx;
                }
            }
            out.at(y, x) = static_cast<float>(acc / area);
        }
    }
    return out;
}

int parse_label(const std::string& cell, int lo, int hi, const std::string& study,
                const char* field) {
    int v = 0;
    try {
        std::size_t pos = 0;
        v = std::stoi(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
        throw DataError("study '" + study + "': field " + field + " value '" + cell +
                        "' is not an integer");
    }
    if (v != -1 && (v < lo || v > hi))
        throw DataError("study '" + study + "': field " + field + " value " + std::to_string(v) +
                        " outside " + std::to_string(lo) + ".." + std::to_string(hi));
    return v;
}

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

}  // namespace

Tensor<float> hflip(const Tensor<float>& img) {
    require_image(img, "hflip");
    const std::size_t H = img.shape(0), W = img.shape(1);
    Tensor<float> out({H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) out.at(y, x) = img.at(y, W - 1 - x);
    return out;
}

Tensor<float> resize(const Tensor<float>& img, std::size_t out_h, std::size_t out_w) {
    require_image(img, "resize");
    if (out_h == 0 || out_w == 0) throw ShapeError("resize: empty target extent");
    if (img.shape(0) == out_h && img.shape(1) == out_w) return img;
    const bool beyond_2x = img.shape(0) > 2 * out_h || img.shape(1) > 2 * out_w;
    return beyond_2x ? resize_area(img, out_h, out_w) : resize_bilinear(img, out_h, out_w);
}

Tensor<float> affine_bilinear(const Tensor<float>& img, double rot_deg, double scale,
                              double tx_frac, double ty_frac) {
    require_image(img, "affine_bilinear");
    if (scale <= 0.0) throw ConfigError("affine scale must be positive");
    const std::size_t H = img.shape(0), W = img.shape(1);
    const double cy = (static_cast<double>(H) - 1.0) / 2.0;
    const double cx = (static_cast<double>(W) - 1.0) / 2.0;
    const double ty = ty_frac * static_cast<double>(H);
    const double tx = tx_frac * static_cast<double>(W);
    const double th = rot_deg * std::acos(-1.0) / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    Tensor<float> out({H, W});
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            // Invert "rotate+scale about the center, then translate".
            const double dy = (static_cast<double>(y) - cy - ty) / scale;
            const double dx = (static_cast<double>(x) - cx - tx) / scale;
            const double sy = cy + (-s * dx + c * dy);
            const double sx = cx + (c * dx + s * dy);
            out.at(y, x) = bilinear_at(img, sy, sx, /*zero_fill=*/true);
        }
    return out;
}

void write_pgm(const fs::path& path, const Tensor<float>& img, int maxval) {
    require_image(img, "write_pgm");
    if (maxval != 255 && maxval != 65535)
        throw ConfigError("graymap maxval must be 255 or 65535, got " + std::to_string(maxval));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
    f << "P5\n" << img.shape(1) << " " << img.shape(0) << "\n" << maxval << "\n";
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::clamp(static_cast<double>(img.data()[i]), 0.0, 1.0);
        const long q = std::lround(v * maxval);
        if (maxval == 255) {
            const unsigned char b = static_cast<unsigned char>(q);
            f.write(reinterpret_cast<const char*>(&b), 1);
        } else {
            const unsigned char hi = static_cast<unsigned char>(q >> 8);
            const unsigned char lo = static_cast<unsigned char>(q & 0xff);
            f.write(reinterpret_cast<const char*>(&hi), 1);
            f.write(reinterpret_cast<const char*>(&lo), 1);
        }
    }
    if (!f) throw DataError("short write to '" + path.string() + "'");
}

Tensor<float> read_pgm(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open graymap '" + path.string() + "'");
    // Header tokens may be separated by arbitrary whitespace and '#' comments.
    auto next_token = [&]() -> std::string {
        std::string tok;
        int ch;
        while ((ch = f.get()) != EOF) {
            if (ch == '#') {
                while ((ch = f.get()) != EOF && ch != '\n') {}
                continue;
            }
            if (std::isspace(ch)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(ch));
        }
        return tok;
    };
    const std::string magic = next_token();
    if (magic != "P5") throw DataError("'" + path.string() + "' is not a binary graymap (P5)");
    const std::string ws = next_token(), hs = next_token(), ms = next_token();
    std::size_t W = 0, H = 0;
    long maxval = 0;
    try {
        W = std::stoul(ws);
        H = std::stoul(hs);
        maxval = std::stol(ms);
    } catch (const std::exception&) {
        throw DataError("malformed graymap header in '" + path.string() + "'");
    }
    if (W == 0 || H == 0 || (maxval != 255 && maxval != 65535))
        throw DataError("unsupported graymap geometry/maxval in '" + path.string() + "'");
    const std::size_t bytes = W * H * (maxval == 255 ? 1 : 2);
    std::vector<unsigned char> raw(bytes);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
    if (f.gcount() != static_cast<std::streamsize>(bytes))
        throw DataError("truncated graymap payload in '" + path.string() + "'");
    Tensor<float> img({H, W});
    if (maxval == 255) {
        for (std::size_t i = 0; i < img.size(); ++i)
            img.data()[i] = static_cast<float>(raw[i] / 255.0);
    } else {
        for (std::size_t i = 0; i < img.size(); ++i) {
            const unsigned v = (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
            img.data()[i] = static_cast<float>(v / 65535.0);
        }
    }
    return img;
}

void apply_missing_mask(FourViewStudy& study) {
    typename Tensor<float>::Shape shape;
    for (std::size_t v = 0; v < fusion::kViews; ++v)
        if (study.presence[v]) {
            if (study.images[v].size() == 0)
                throw DataError("study '" + study.study_id + "': view " +
                                fusion::kViewNames[v] + " marked present but holds no image");
            shape = study.images[v].shape();
        }
    for (std::size_t v = 0; v < fusion::kViews; ++v)
        if (!study.presence[v])
            study.images[v] = shape.empty() ? Tensor<float>() : Tensor<float>::zeros(shape);
}

FourViewStudy augment(const FourViewStudy& study, Rng& rng) {
    FourViewStudy out = study;
    for (std::size_t v = 0; v < fusion::kViews; ++v) {
        const double rot = rng.uniform(-10.0, 10.0);
        const double sc = rng.uniform(0.95, 1.05);
        const double tx = rng.uniform(-0.05, 0.05);
        const double ty = rng.uniform(-0.05, 0.05);
        const bool flip = rng.bernoulli(0.5);
        if (!study.presence[v]) continue;
        out.images[v] = affine_bilinear(study.images[v], rot, sc, tx, ty);
        if (flip) out.images[v] = hflip(out.images[v]);
    }
    return out;
}

std::array<Tensor<float>, fusion::kViews> preprocess(const FourViewStudy& study, std::size_t S) {
    std::array<Tensor<float>, fusion::kViews> out;
    for (std::size_t v = 0; v < fusion::kViews; ++v) {
        Tensor<float> chans({3, S, S});
        if (study.presence[v]) {
            if (study.images[v].size() == 0)
                throw DataError("study '" + study.study_id + "': view " +
                                fusion::kViewNames[v] + " marked present but holds no image");
            Tensor<float> plane = resize(study.images[v], S, S);
            for (std::size_t c = 0; c < 3; ++c)
                std::copy(plane.data(), plane.data() + S * S, chans.data() + c * S * S);
        } else {
            chans.fill(0.0f);
        }
        out[v] = std::move(chans);
    }
    return out;
}

void export_dataset(const fs::path& dir, const std::vector<FourViewStudy>& studies) {
    fs::create_directories(dir);
    std::ofstream manifest(dir / kManifestName);
    if (!manifest) throw DataError("cannot write manifest in '" + dir.string() + "'");
    manifest << kManifestHeader << "\n";
    for (const FourViewStudy& s : studies) {
        std::array<std::string, fusion::kViews> cells;
        for (std::size_t v = 0; v < fusion::kViews; ++v) {
            if (!s.presence[v]) continue;
            cells[v] = s.study_id + "_" + fusion::kViewNames[v] + ".pgm";
            // Right-breast views are stored in native (mirrored) orientation.
            const bool right = v >= 2;
            write_pgm(dir / cells[v], right ? hflip(s.images[v]) : s.images[v]);
        }
        manifest << s.study_id;
        for (const std::string& c : cells) manifest << ',' << c;
        manifest << ',' << s.labels.label_l << ',' << s.labels.label_r << ','
                 << s.labels.birads_l << ',' << s.labels.birads_r << "\n";
    }
    if (!manifest) throw DataError("short manifest write in '" + dir.string() + "'");
}

std::vector<FourViewStudy> ingest(const fs::path& dir, std::size_t S) {
    const fs::path mpath = dir / kManifestName;
    std::ifstream f(mpath);
    if (!f) throw DataError("cannot open manifest '" + mpath.string() + "'");
    std::string line;
    if (!std::getline(f, line) || split_csv_row(line) != split_csv_row(kManifestHeader))
        throw DataError("manifest '" + mpath.string() + "' lacks the expected header");

    std::vector<FourViewStudy> studies;
    std::set<std::string> seen;
    while (std::getline(f, line)) {
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> cells = split_csv_row(line);
        if (cells.size() != 9)
            throw DataError("manifest row with " + std::to_string(cells.size()) +
                            " fields (expected 9): '" + line + "'");
        FourViewStudy s;
        s.study_id = cells[0];
        if (s.study_id.empty()) throw DataError("manifest row with empty study id");
        if (!seen.insert(s.study_id).second)
            throw DataError("duplicate study id '" + s.study_id + "' in manifest");

        for (std::size_t v = 0; v < fusion::kViews; ++v) s.presence[v] = !cells[1 + v].empty();
        for (std::size_t side = 0; side < 2; ++side)
            if (s.presence[2 * side] != s.presence[2 * side + 1])
                throw DataError("study '" + s.study_id + "': " +
                                (side == 0 ? "left" : "right") +
                                " side has a single view; sides must be complete or absent");

        s.labels.label_l = parse_label(cells[5], 0, 1, s.study_id, "label_l");
        s.labels.label_r = parse_label(cells[6], 0, 1, s.study_id, "label_r");
        s.labels.birads_l = parse_label(cells[7], 1, 5, s.study_id, "birads_l");
        s.labels.birads_r = parse_label(cells[8], 1, 5, s.study_id, "birads_r");
        const bool left = s.presence[0], right = s.presence[2];
        if (left == (s.labels.label_l == -1) || left == (s.labels.birads_l == -1) ||
            right == (s.labels.label_r == -1) || right == (s.labels.birads_r == -1))
            throw DataError("study '" + s.study_id +
                            "': labels must be -1 exactly for absent sides");

        for (std::size_t v = 0; v < fusion::kViews; ++v) {
            if (!s.presence[v]) continue;
            const fs::path ipath = dir / cells[1 + v];
            if (!fs::exists(ipath))
                throw DataError("study '" + s.study_id + "': image file '" + cells[1 + v] +
                                "' is missing");
            Tensor<float> img = read_pgm(ipath);
            if (v >= 2) img = hflip(img);  // canonical orientation for right views
            s.images[v] = resize(img, S, S);
        }
        studies.push_back(std::move(s));
    }
    return studies;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(
    std::size_t n, double train_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || train_frac >= 1.0)
        throw ConfigError("train fraction must lie strictly between 0 and 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix64(seed, fnv1a64("split")));
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(order[i - 1], order[j]);
    }
    const std::size_t n_train =
        static_cast<std::size_t>(std::lround(train_frac * static_cast<double>(n)));
    std::vector<std::size_t> train(order.begin(), order.begin() + n_train);
    std::vector<std::size_t> val(order.begin() + n_train, order.end());
    return {std::move(train), std::move(val)};
}

}  // namespace vsmk::data
