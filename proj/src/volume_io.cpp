#include "vffc/volume_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vffc/errors.hpp"

namespace vffc {

namespace {

namespace fs = std::filesystem;

std::string slice_name(std::int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "slice_%04lld.pgm", static_cast<long long>(i));
    return buf;
}

// Reads one PGM header token, skipping whitespace and '#' comments.
std::int64_t pgm_token(std::istream& is, const std::string& path) {
    int c = is.get();
    while (is && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (is && c != '\n') c = is.get();
        c = is.get();
    }
    std::int64_t v = 0;
    bool any = false;
    while (is && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw DataError("pgm: malformed header in " + path);
    return v;  // the terminating whitespace byte has been consumed
}

struct PgmImage {
    std::int64_t height = 0, width = 0, maxval = 0;
    std::vector<std::uint16_t> samples;
};

PgmImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("pgm: cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (!is || m0 != 'P' || m1 != '5') throw DataError("pgm: not a binary PGM: " + path);
    PgmImage img;
    img.width = pgm_token(is, path);
    img.height = pgm_token(is, path);
    img.maxval = pgm_token(is, path);
    if (img.width <= 0 || img.height <= 0 || img.maxval <= 0 || img.maxval > 65535)
        throw DataError("pgm: bad dimensions or maxval in " + path);
    const std::int64_t n = img.width * img.height;
    img.samples.resize(static_cast<std::size_t>(n));
    if (img.maxval > 255) {
        std::vector<unsigned char> raw(static_cast<std::size_t>(2 * n));
        is.read(reinterpret_cast<char*>(raw.data()), 2 * n);
        if (!is) throw DataError("pgm: truncated pixel data in " + path);
        for (std::int64_t i = 0; i < n; ++i)
            img.samples[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    } else {
        std::vector<unsigned char> raw(static_cast<std::size_t>(n));
        is.read(reinterpret_cast<char*>(raw.data()), n);
        if (!is) throw DataError("pgm: truncated pixel data in " + path);
        for (std::int64_t i = 0; i < n; ++i) img.samples[i] = raw[i];
    }
    return img;
}

void write_pgm(const std::string& path, std::int64_t h, std::int64_t w, std::int64_t maxval,
               const std::vector<std::uint16_t>& samples) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("pgm: cannot open " + path + " for writing");
    os << "P5\n" << w << " " << h << "\n" << maxval << "\n";
    if (maxval > 255) {
        std::vector<unsigned char> raw(samples.size() * 2);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            raw[2 * i] = static_cast<unsigned char>(samples[i] >> 8);
            raw[2 * i + 1] = static_cast<unsigned char>(samples[i] & 0xff);
        }
        os.write(reinterpret_cast<const char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size()));
    } else {
        std::vector<unsigned char> raw(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i)
            raw[i] = static_cast<unsigned char>(samples[i]);
        os.write(reinterpret_cast<const char*>(raw.data()),
                 static_cast<std::streamsize>(raw.size()));
    }
    if (!os) throw DataError("pgm: write failure on " + path);
}

std::int64_t meta_value(const std::string& text, const std::string& key, const std::string& path) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string k = line.substr(0, eq);
        k.erase(0, k.find_first_not_of(" \t"));
        k.erase(k.find_last_not_of(" \t") + 1);
        if (k == key) return std::strtoll(line.c_str() + eq + 1, nullptr, 10);
    }
    throw DataError("volume.meta: missing key '" + key + "' in " + path);
}

}  // namespace

double InkMask::prevalence() const {
    if (values.empty()) return 0.0;
    std::int64_t ink = 0;
    for (auto v : values) ink += v != 0;
    return static_cast<double>(ink) / static_cast<double>(values.size());
}

FragmentVolume load_volume(const std::string& dir) {
    const std::string meta_path = dir + "/volume.meta";
    std::ifstream mf(meta_path);
    if (!mf) throw DataError("volume: cannot open " + meta_path);
    std::stringstream mbuf;
    mbuf << mf.rdbuf();
    FragmentVolume v;
    v.depth = meta_value(mbuf.str(), "slices", meta_path);
    v.height = meta_value(mbuf.str(), "height", meta_path);
    v.width = meta_value(mbuf.str(), "width", meta_path);
    if (v.depth <= 0 || v.height <= 0 || v.width <= 0)
        throw DataError("volume: non-positive dimensions in " + meta_path);
    v.voxels.resize(static_cast<std::size_t>(v.depth * v.height * v.width));
    for (std::int64_t z = 0; z < v.depth; ++z) {
        const std::string path = dir + "/" + slice_name(z);
        if (!fs::exists(path)) throw DataError("volume: missing slice file " + path);
        PgmImage img = read_pgm(path);
        if (img.height != v.height || img.width != v.width)
            throw DataError("volume: slice dimension mismatch in " + path);
        const double scale = 1.0 / static_cast<double>(img.maxval);
        double* dst = v.voxels.data() + z * v.height * v.width;
        for (std::int64_t i = 0; i < v.height * v.width; ++i)
            dst[i] = static_cast<double>(img.samples[static_cast<std::size_t>(i)]) * scale;
    }
    return v;
}

void save_volume(const std::string& dir, const FragmentVolume& v, double voxel_size_um) {
    fs::create_directories(dir);
    std::ofstream mf(dir + "/volume.meta");
    if (!mf) throw DataError("volume: cannot write " + dir + "/volume.meta");
    mf << "slices = " << v.depth << "\n";
    mf << "height = " << v.height << "\n";
    mf << "width = " << v.width << "\n";
    mf << "voxel_size_um = " << voxel_size_um << "\n";
    std::vector<std::uint16_t> samples(static_cast<std::size_t>(v.height * v.width));
    for (std::int64_t z = 0; z < v.depth; ++z) {
        const double* src = v.voxels.data() + z * v.height * v.width;
        for (std::int64_t i = 0; i < v.height * v.width; ++i) {
            double q = std::clamp(src[i], 0.0, 1.0) * 65535.0;
            samples[static_cast<std::size_t>(i)] =
                static_cast<std::uint16_t>(std::llround(q));
        }
        write_pgm(dir + "/" + slice_name(z), v.height, v.width, 65535, samples);
    }
}

InkMask load_mask(const std::string& path) {
    PgmImage img = read_pgm(path);
    InkMask m;
    m.height = img.height;
    m.width = img.width;
    m.values.resize(img.samples.size());
    const std::int64_t half = (img.maxval + 1) / 2;
    for (std::size_t i = 0; i < img.samples.size(); ++i)
        m.values[i] = img.samples[i] >= half ? 1 : 0;
    return m;
}

void save_mask(const std::string& path, const InkMask& m) {
    std::vector<std::uint16_t> samples(m.values.size());
    for (std::size_t i = 0; i < m.values.size(); ++i) samples[i] = m.values[i] ? 255 : 0;
    write_pgm(path, m.height, m.width, 255, samples);
}

std::vector<double> load_inkmap(const std::string& path, std::int64_t& h, std::int64_t& w) {
    PgmImage img = read_pgm(path);
    h = img.height;
    w = img.width;
    std::vector<double> map(img.samples.size());
    const double scale = 1.0 / static_cast<double>(img.maxval);
    for (std::size_t i = 0; i < img.samples.size(); ++i)
        map[i] = static_cast<double>(img.samples[i]) * scale;
    return map;
}

void save_inkmap(const std::string& path, const std::vector<double>& map, std::int64_t h,
                 std::int64_t w) {
    if (static_cast<std::int64_t>(map.size()) != h * w)
        throw DataError("inkmap: size does not match dimensions");
    std::vector<std::uint16_t> samples(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        double q = std::clamp(map[i], 0.0, 1.0) * 255.0;
        samples[i] = static_cast<std::uint16_t>(std::llround(q));
    }
    write_pgm(path, h, w, 255, samples);
}

}  // namespace vffc
