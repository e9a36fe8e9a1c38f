#include "iflow/flow_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "iflow/detail/binio.hpp"

namespace iflow {

namespace {

using detail::get_f32;
using detail::get_u32;
using detail::put_f32;
using detail::put_u32;

constexpr float kFloMagic = 202021.25f;

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return is;
}

// PGM header: "P5", whitespace/comments, width, height, maxval.
int pgm_int(std::istream& is, const std::string& path) {
    int c = is.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = is.get();
        c = is.get();
    }
    if (c == EOF || !std::isdigit(c)) throw IoError("malformed PGM header: " + path);
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = is.get();
    }
    return value;
}

struct PgmData {
    int width, height;
    std::vector<std::uint8_t> bytes;
};

PgmData read_pgm(std::istream& is, const std::string& path) {
    char m0 = static_cast<char>(is.get());
    char m1 = static_cast<char>(is.get());
    if (m0 != 'P' || m1 != '5') {
        if (m0 == 'P' && (m1 == '6' || m1 == '3'))
            throw IoError("multi-channel image where single-channel expected: " + path);
        throw IoError("not a binary PGM: " + path);
    }
    PgmData p;
    p.width = pgm_int(is, path);
    p.height = pgm_int(is, path);
    const int maxval = pgm_int(is, path);
    if (p.width <= 0 || p.height <= 0) throw IoError("nonpositive PGM dimensions: " + path);
    if (maxval != 255) throw IoError("unsupported PGM maxval (want 255): " + path);
    p.bytes.resize(static_cast<std::size_t>(p.width) * p.height);
    is.read(reinterpret_cast<char*>(p.bytes.data()), static_cast<std::streamsize>(p.bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(p.bytes.size()))
        throw IoError("truncated PGM payload: " + path);
    return p;
}

void write_pgm(std::ostream& os, int w, int h, const std::uint8_t* bytes) {
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(w) * h);
}

}  // namespace

FlowField read_flo(const std::string& path) {
    auto is = open_in(path);
    const float magic = get_f32(is);
    if (!is || magic != kFloMagic)
        throw IoError("bad .flo magic in " + path + " (expected 202021.25)");
    const auto w = static_cast<std::int32_t>(get_u32(is));
    const auto h = static_cast<std::int32_t>(get_u32(is));
    if (!is || w <= 0 || h <= 0)
        throw IoError("nonpositive .flo dimensions in " + path + ": " + std::to_string(w) + "x" +
                      std::to_string(h));
    FlowField f(w, h);
    for (std::size_t i = 0; i < f.size(); ++i) {
        f.u[i] = get_f32(is);
        f.v[i] = get_f32(is);
    }
    if (!is) throw IoError("truncated .flo payload: " + path);
    return f;
}

void write_flo(const FlowField& flow, const std::string& path) {
    auto os = open_out(path);
    put_f32(os, kFloMagic);
    put_u32(os, static_cast<std::uint32_t>(flow.width));
    put_u32(os, static_cast<std::uint32_t>(flow.height));
    for (std::size_t i = 0; i < flow.size(); ++i) {
        put_f32(os, flow.u[i]);
        put_f32(os, flow.v[i]);
    }
    if (!os) throw IoError("failed writing .flo: " + path);
}

MatchList parse_matches(std::istream& in) {
    MatchList matches;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        double vals[4];
        int got = 0;
        std::string tok;
        while (got < 4 && ls >> tok) {
            std::size_t pos = 0;
            double v = 0;
            try {
                v = std::stod(tok, &pos);
            } catch (const std::exception&) {
                throw IoError("match list line " + std::to_string(lineno) + ": non-numeric token '" +
                              tok + "'");
            }
            if (pos != tok.size())
                throw IoError("match list line " + std::to_string(lineno) +
                              ": non-numeric token '" + tok + "'");
            vals[got++] = v;
        }
        if (got == 0) continue;  // blank line
        if (got < 4)
            throw IoError("match list line " + std::to_string(lineno) + ": expected 4 fields, got " +
                          std::to_string(got));
        Match m;
        m.x1 = static_cast<int>(std::lround(vals[0]));
        m.y1 = static_cast<int>(std::lround(vals[1]));
        m.x2 = static_cast<int>(std::lround(vals[2]));
        m.y2 = static_cast<int>(std::lround(vals[3]));
        matches.push_back(m);
    }
    return matches;
}

MatchList read_matches(const std::string& path) {
    auto is = open_in(path);
    return parse_matches(is);
}

EdgeMap read_edge_map(const std::string& path) {
    auto is = open_in(path);
    char magic[4] = {0, 0, 0, 0};
    is.read(magic, 4);
    if (is.gcount() < 2) throw IoError("truncated edge map: " + path);
    is.seekg(0);
    EdgeMap e;
    if (std::memcmp(magic, "EDGF", 4) == 0) {
        is.seekg(4);
        const auto w = static_cast<std::int32_t>(get_u32(is));
        const auto h = static_cast<std::int32_t>(get_u32(is));
        if (!is || w <= 0 || h <= 0) throw IoError("bad raw edge map header: " + path);
        e = EdgeMap(w, h);
        for (auto& s : e.strength) s = get_f32(is);
        if (!is) throw IoError("truncated raw edge map: " + path);
    } else {
        PgmData p = read_pgm(is, path);
        e = EdgeMap(p.width, p.height);
        for (std::size_t i = 0; i < p.bytes.size(); ++i) e.strength[i] = float(p.bytes[i]) / 255.f;
    }
    for (auto& s : e.strength) s = std::clamp(s, 0.f, 1.f);
    return e;
}

void write_edge_map_pgm(const EdgeMap& edges, const std::string& path) {
    auto os = open_out(path);
    std::vector<std::uint8_t> bytes(edges.strength.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(edges.strength[i], 0.f, 1.f) * 255.f));
    write_pgm(os, edges.width, edges.height, bytes.data());
    if (!os) throw IoError("failed writing PGM: " + path);
}

void write_edge_map_raw(const EdgeMap& edges, const std::string& path) {
    auto os = open_out(path);
    os.write("EDGF", 4);
    put_u32(os, static_cast<std::uint32_t>(edges.width));
    put_u32(os, static_cast<std::uint32_t>(edges.height));
    for (float s : edges.strength) put_f32(os, s);
    if (!os) throw IoError("failed writing raw edge map: " + path);
}

MissingMask read_mask_pgm(const std::string& path) {
    auto is = open_in(path);
    PgmData p = read_pgm(is, path);
    MissingMask m(p.width, p.height);
    for (std::size_t i = 0; i < p.bytes.size(); ++i) m.missing[i] = p.bytes[i] ? 1 : 0;
    return m;
}

void write_mask_pgm(const MissingMask& mask, const std::string& path) {
    auto os = open_out(path);
    std::vector<std::uint8_t> bytes(mask.missing.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.missing[i] ? 255 : 0;
    write_pgm(os, mask.width, mask.height, bytes.data());
    if (!os) throw IoError("failed writing PGM: " + path);
}

void write_ppm(const Image& img, const std::string& path) {
    auto os = open_out(path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    if (!os) throw IoError("failed writing PPM: " + path);
}

namespace {

// The 55-entry wheel of Baker et al.'s flow visualization; segment lengths
// follow perceptual hue spacing.
struct ColorWheel {
    static constexpr int kSize = 55;
    int rgb[kSize][3];
    ColorWheel() {
        const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
        int k = 0;
        for (int i = 0; i < RY; ++i, ++k) set(k, 255, 255 * i / RY, 0);
        for (int i = 0; i < YG; ++i, ++k) set(k, 255 - 255 * i / YG, 255, 0);
        for (int i = 0; i < GC; ++i, ++k) set(k, 0, 255, 255 * i / GC);
        for (int i = 0; i < CB; ++i, ++k) set(k, 0, 255 - 255 * i / CB, 255);
        for (int i = 0; i < BM; ++i, ++k) set(k, 255 * i / BM, 0, 255);
        for (int i = 0; i < MR; ++i, ++k) set(k, 255, 0, 255 - 255 * i / MR);
    }
    void set(int k, int r, int g, int b) {
        rgb[k][0] = r;
        rgb[k][1] = g;
        rgb[k][2] = b;
    }
};

const ColorWheel& wheel() {
    static const ColorWheel w;
    return w;
}

}  // namespace

Image flow_to_color(const FlowField& flow, std::optional<float> max_magnitude) {
    const auto& cw = wheel();
    double max_rad = 0.0;
    if (max_magnitude) {
        max_rad = double(*max_magnitude);
    } else {
        for (std::size_t i = 0; i < flow.size(); ++i)
            max_rad = std::max(max_rad, std::hypot(double(flow.u[i]), double(flow.v[i])));
    }
    Image img(flow.width, flow.height);
    for (std::size_t i = 0; i < flow.size(); ++i) {
        const double u = flow.u[i], v = flow.v[i];
        const double rad = std::hypot(u, v);
        const double sat = max_rad > 0.0 ? std::min(rad / max_rad, 1.0) : 0.0;
        double angle = std::atan2(v, u);  // hue; angle 0 = wheel entry 0
        if (angle < 0) angle += 2.0 * M_PI;
        const double fk = angle / (2.0 * M_PI) * ColorWheel::kSize;
        int k0 = static_cast<int>(fk) % ColorWheel::kSize;
        const int k1 = (k0 + 1) % ColorWheel::kSize;
        const double f = fk - std::floor(fk);
        for (int ch = 0; ch < 3; ++ch) {
            const double c0 = cw.rgb[k0][ch] / 255.0;
            const double c1 = cw.rgb[k1][ch] / 255.0;
            double col = (1.0 - f) * c0 + f * c1;
            col = 1.0 - sat * (1.0 - col);  // desaturate toward white at the center
            img.rgb[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(255.0 * col));
        }
    }
    return img;
}

}  // namespace iflow
