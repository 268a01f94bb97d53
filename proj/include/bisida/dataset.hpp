#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bisida/netpbm.hpp"
#include "bisida/toy_domains.hpp"

namespace bisida {

namespace fs = std::filesystem;

// On-disk layout: <root>/<domain>/img/<index:05>.ppm and <root>/<domain>/lab/<index:05>.pgm.
inline std::string index_name(std::size_t i, const char* ext)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu.%s", i, ext);
    return buf;
}

inline void write_split(const fs::path& root, const std::string& domain, const std::vector<Scene>& scenes)
{
    const fs::path img_dir = root / domain / "img";
    const fs::path lab_dir = root / domain / "lab";
    fs::create_directories(img_dir);
    fs::create_directories(lab_dir);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        write_ppm(img_dir / index_name(i, "ppm"), scenes[i].image);
        write_pgm(lab_dir / index_name(i, "pgm"), scenes[i].label);
    }
}

inline std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext)
{
    if (!fs::is_directory(dir)) throw ValidationError("missing directory '" + dir.string() + "'");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline std::vector<Image> load_images(const fs::path& root, const std::string& domain)
{
    std::vector<Image> out;
    for (const auto& p : sorted_files(root / domain / "img", ".ppm")) out.push_back(read_ppm(p));
    if (out.empty()) throw ValidationError("no images under '" + (root / domain).string() + "'");
    return out;
}

inline std::vector<Scene> load_split(const fs::path& root, const std::string& domain, std::size_t num_classes)
{
    const auto images = sorted_files(root / domain / "img", ".ppm");
    std::vector<Scene> out;
    for (const auto& ip : images) {
        const fs::path lp = root / domain / "lab" / (ip.stem().string() + ".pgm");
        Scene s{read_ppm(ip), read_pgm(lp, num_classes)};
        if (s.image.height != s.label.height || s.image.width != s.label.width) {
            throw FormatError("'" + lp.string() + "' does not match its image size");
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) throw ValidationError("no scenes under '" + (root / domain).string() + "'");
    return out;
}

struct ManifestEntry {
    std::string domain;
    std::size_t count = 0;
    DomainSpec spec;
};

inline void write_manifest(const fs::path& root, const std::vector<ManifestEntry>& entries, std::size_t height,
                           std::size_t width, std::uint64_t seed)
{
    std::ofstream out(root / "manifest.txt");
    if (!out) throw ValidationError("cannot write manifest under '" + root.string() + "'");
    out << "# toy two-domain segmentation benchmark\n";
    out << "seed " << seed << "\nheight " << height << "\nwidth " << width << "\nclasses " << kNumClasses << "\n";
    for (const auto& e : entries) {
        out << "split " << e.domain << " count " << e.count << " spec " << e.spec.name << " hue_shift "
            << e.spec.hue_shift << " gamma " << e.spec.gamma << " noise_sigma " << e.spec.noise_sigma
            << " shape_frequencies " << e.spec.shape_frequencies[0] << ',' << e.spec.shape_frequencies[1] << ','
            << e.spec.shape_frequencies[2] << " palette";
        for (const auto& c : e.spec.palette) out << ' ' << c[0] << ',' << c[1] << ',' << c[2];
        out << '\n';
    }
}

}  // namespace bisida
