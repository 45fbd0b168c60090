// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/io.hpp"

#include "fleg/fit.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fleg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw DataError("cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out)
        throw DataError("short write to " + path.string());
}

float read_f32(const std::string& bytes, size_t offset) {
    float v;
    std::memcpy(&v, bytes.data() + offset, 4);
    return v;
}

uint32_t read_u32(const std::string& bytes, size_t offset) {
    uint32_t v;
    std::memcpy(&v, bytes.data() + offset, 4);
    return v;
}

void append_f32(std::string& bytes, float v) { bytes.append(reinterpret_cast<const char*>(&v), 4); }
void append_u32(std::string& bytes, uint32_t v) { bytes.append(reinterpret_cast<const char*>(&v), 4); }

void need_bytes(const std::string& bytes, size_t offset, size_t count, const fs::path& path,
                const char* what) {
    if (offset + count > bytes.size())
        throw DataError(path.string() + ": truncated " + what + " at byte " + std::to_string(offset) +
                        " (expected " + std::to_string(count) + " more bytes, have " +
                        std::to_string(bytes.size() - offset) + ")");
}

// ---- PLY --------------------------------------------------------------

struct PlyHeader {
    size_t vertex_count = 0;
    std::vector<std::string> properties;
    size_t payload_offset = 0;
    bool fleg_comment = false;
};

PlyHeader parse_ply_header(const std::string& bytes, const fs::path& path) {
    PlyHeader header;
    size_t pos = 0;
    bool format_seen = false;
    bool first = true;
    while (true) {
        const size_t eol = bytes.find('\n', pos);
        if (eol == std::string::npos)
            throw DataError(path.string() + ": unterminated PLY header at byte " + std::to_string(pos));
        std::string line = bytes.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const size_t line_start = pos;
        pos = eol + 1;
        if (first) {
            if (line != "ply")
                throw DataError(path.string() + ": not a PLY file (byte 0)");
            first = false;
            continue;
        }
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt != "binary_little_endian")
                throw DataError(path.string() + ": unsupported PLY format '" + fmt + "' at byte " +
                                std::to_string(line_start));
            format_seen = true;
        } else if (word == "comment") {
            std::string rest;
            std::getline(ss, rest);
            if (rest.find("fleg_scene") != std::string::npos)
                header.fleg_comment = true;
        } else if (word == "element") {
            std::string kind;
            size_t count;
            ss >> kind >> count;
            if (kind != "vertex")
                throw DataError(path.string() + ": unexpected element '" + kind + "' at byte " +
                                std::to_string(line_start));
            header.vertex_count = count;
        } else if (word == "property") {
            std::string type, name;
            ss >> type >> name;
            if (type != "float")
                throw DataError(path.string() + ": unsupported property type '" + type + "' at byte " +
                                std::to_string(line_start));
            header.properties.push_back(name);
        } else if (word == "end_header") {
            header.payload_offset = pos;
            break;
        } else if (word.empty()) {
            continue;
        } else {
            throw DataError(path.string() + ": unknown header line '" + line + "' at byte " +
                            std::to_string(line_start));
        }
    }
    if (!format_seen)
        throw DataError(path.string() + ": missing PLY format line");
    return header;
}

int column_of(const PlyHeader& header, const std::string& name, const fs::path& path) {
    for (size_t i = 0; i < header.properties.size(); ++i)
        if (header.properties[i] == name)
            return int(i);
    throw DataError(path.string() + ": missing property '" + name + "'");
}

int count_prefixed(const PlyHeader& header, const std::string& prefix) {
    int n = 0;
    while (true) {
        const std::string name = prefix + std::to_string(n);
        bool found = false;
        for (const std::string& p : header.properties)
            found = found || p == name;
        if (!found)
            break;
        ++n;
    }
    return n;
}

double checked(double v, const fs::path& path, size_t row, const std::string& prop) {
    if (!std::isfinite(v))
        throw DataError(path.string() + ": non-finite value in row " + std::to_string(row) +
                        " property " + prop);
    return v;
}

std::string ply_header_string(size_t count, const std::vector<std::string>& properties) {
    std::ostringstream out;
    out << "ply\nformat binary_little_endian 1.0\ncomment fleg_scene 1\nelement vertex " << count << "\n";
    for (const std::string& p : properties)
        out << "property float " << p << "\n";
    out << "end_header\n";
    return out.str();
}

} // namespace

Scene read_scene(const fs::path& geo_path, const std::optional<fs::path>& sem_path) {
    Scene scene;
    {
        const std::string bytes = read_file(geo_path);
        const PlyHeader header = parse_ply_header(bytes, geo_path);
        const size_t n_props = header.properties.size();
        need_bytes(bytes, header.payload_offset, header.vertex_count * n_props * 4, geo_path, "vertex payload");

        const int col_x = column_of(header, "x", geo_path);
        const int col_y = column_of(header, "y", geo_path);
        const int col_z = column_of(header, "z", geo_path);
        int col_scale[3], col_rot[4];
        for (int k = 0; k < 3; ++k)
            col_scale[k] = column_of(header, "scale_" + std::to_string(k), geo_path);
        for (int k = 0; k < 4; ++k)
            col_rot[k] = column_of(header, "rot_" + std::to_string(k), geo_path);
        const int col_op = column_of(header, "opacity", geo_path);
        const int col_conf = column_of(header, "conf", geo_path);
        int col_dc[3];
        for (int k = 0; k < 3; ++k)
            col_dc[k] = column_of(header, "f_dc_" + std::to_string(k), geo_path);
        const int n_rest = count_prefixed(header, "f_rest_");
        if (n_rest % 3 != 0)
            throw DataError(geo_path.string() + ": f_rest_* count " + std::to_string(n_rest) +
                            " is not a multiple of 3");
        const int n_coeff = 1 + n_rest / 3;
        int degree = 0;
        while ((degree + 1) * (degree + 1) < n_coeff)
            ++degree;
        if ((degree + 1) * (degree + 1) != n_coeff || degree > 3)
            throw DataError(geo_path.string() + ": f_rest_* count does not match an SH degree <= 3");
        std::vector<int> col_rest(n_rest);
        for (int k = 0; k < n_rest; ++k)
            col_rest[k] = column_of(header, "f_rest_" + std::to_string(k), geo_path);
        const int feat_dim = count_prefixed(header, "feat_");
        std::vector<int> col_feat(feat_dim);
        for (int k = 0; k < feat_dim; ++k)
            col_feat[k] = column_of(header, "feat_" + std::to_string(k), geo_path);

        scene.sh_degree = degree;
        scene.feat_dim = feat_dim;
        scene.geo.reserve(header.vertex_count);
        for (size_t row = 0; row < header.vertex_count; ++row) {
            const size_t base = header.payload_offset + row * n_props * 4;
            auto at = [&](int col) { return double(read_f32(bytes, base + size_t(col) * 4)); };
            Gaussian3D g;
            g.mu = Vec3(checked(at(col_x), geo_path, row, "x"), checked(at(col_y), geo_path, row, "y"),
                        checked(at(col_z), geo_path, row, "z"));
            for (int k = 0; k < 3; ++k)
                g.scale[k] = checked(at(col_scale[k]), geo_path, row, "scale");
            for (int k = 0; k < 4; ++k)
                g.rot[k] = checked(at(col_rot[k]), geo_path, row, "rot");
            g.opacity = checked(at(col_op), geo_path, row, "opacity");
            g.conf = checked(at(col_conf), geo_path, row, "conf");
            g.sh.assign(n_coeff, Vec3::Zero());
            for (int k = 0; k < 3; ++k)
                g.sh[0][k] = checked(at(col_dc[k]), geo_path, row, "f_dc");
            for (int b = 1; b < n_coeff; ++b)
                for (int k = 0; k < 3; ++k)
                    g.sh[b][k] = checked(at(col_rest[(b - 1) * 3 + k]), geo_path, row, "f_rest");
            if (feat_dim > 0) {
                g.feat.resize(feat_dim);
                for (int k = 0; k < feat_dim; ++k)
                    g.feat[k] = checked(at(col_feat[k]), geo_path, row, "feat");
            }
            scene.geo.push_back(std::move(g));
        }
    }

    if (sem_path) {
        const std::string bytes = read_file(*sem_path);
        const PlyHeader header = parse_ply_header(bytes, *sem_path);
        const size_t n_props = header.properties.size();
        need_bytes(bytes, header.payload_offset, header.vertex_count * n_props * 4, *sem_path, "vertex payload");
        const int col_x = column_of(header, "x", *sem_path);
        const int col_y = column_of(header, "y", *sem_path);
        const int col_z = column_of(header, "z", *sem_path);
        const int col_scale = column_of(header, "scale_iso", *sem_path);
        const int col_op = column_of(header, "opacity", *sem_path);
        const int feat_dim = count_prefixed(header, "feat_");
        if (feat_dim == 0)
            throw DataError(sem_path->string() + ": semantic file has no feat_* properties");
        if (scene.feat_dim != 0 && feat_dim != scene.feat_dim)
            throw DataError(sem_path->string() + ": feat_dim " + std::to_string(feat_dim) +
                            " does not match geometry feat_dim " + std::to_string(scene.feat_dim));
        scene.feat_dim = feat_dim;
        std::vector<int> col_feat(feat_dim);
        for (int k = 0; k < feat_dim; ++k)
            col_feat[k] = column_of(header, "feat_" + std::to_string(k), *sem_path);

        std::vector<SemanticGaussian> sem;
        sem.reserve(header.vertex_count);
        for (size_t row = 0; row < header.vertex_count; ++row) {
            const size_t base = header.payload_offset + row * n_props * 4;
            auto at = [&](int col) { return double(read_f32(bytes, base + size_t(col) * 4)); };
            SemanticGaussian s;
            s.mu = Vec3(checked(at(col_x), *sem_path, row, "x"), checked(at(col_y), *sem_path, row, "y"),
                        checked(at(col_z), *sem_path, row, "z"));
            s.scale_iso = checked(at(col_scale), *sem_path, row, "scale_iso");
            s.opacity = checked(at(col_op), *sem_path, row, "opacity");
            s.feat.resize(feat_dim);
            for (int k = 0; k < feat_dim; ++k)
                s.feat[k] = checked(at(col_feat[k]), *sem_path, row, "feat");
            sem.push_back(std::move(s));
        }
        scene.sem = std::move(sem);
    }
    return scene;
}

void write_scene(const Scene& scene, const fs::path& geo_path, const std::optional<fs::path>& sem_path) {
    const int n_coeff = scene.sh_coeff_count();
    bool any_feat = false;
    for (const Gaussian3D& g : scene.geo)
        any_feat = any_feat || !g.feat.empty();

    std::vector<std::string> props = {"x", "y", "z", "scale_0", "scale_1", "scale_2",
                                      "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
                                      "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int b = 1; b < n_coeff; ++b)
        for (int k = 0; k < 3; ++k)
            props.push_back("f_rest_" + std::to_string((b - 1) * 3 + k));
    props.push_back("conf");
    if (any_feat)
        for (int k = 0; k < scene.feat_dim; ++k)
            props.push_back("feat_" + std::to_string(k));

    std::string bytes = ply_header_string(scene.geo.size(), props);
    for (const Gaussian3D& g : scene.geo) {
        for (int k = 0; k < 3; ++k)
            append_f32(bytes, float(g.mu[k]));
        for (int k = 0; k < 3; ++k)
            append_f32(bytes, float(g.scale[k]));
        for (int k = 0; k < 4; ++k)
            append_f32(bytes, float(g.rot[k]));
        append_f32(bytes, float(g.opacity));
        for (int k = 0; k < 3; ++k)
            append_f32(bytes, float(g.sh.empty() ? 0.0 : g.sh[0][k]));
        for (int b = 1; b < n_coeff; ++b)
            for (int k = 0; k < 3; ++k)
                append_f32(bytes, float(g.sh[b][k]));
        append_f32(bytes, float(g.conf));
        if (any_feat)
            for (int k = 0; k < scene.feat_dim; ++k)
                append_f32(bytes, float(g.feat.empty() ? 0.0 : g.feat[k]));
    }
    atomic_write(geo_path, [&](const fs::path& tmp) { write_file(tmp, bytes); });

    if (sem_path) {
        if (!scene.sem)
            throw DataError("write_scene: semantic path given but the scene has no semantic set");
        std::vector<std::string> sem_props = {"x", "y", "z", "scale_iso", "opacity"};
        for (int k = 0; k < scene.feat_dim; ++k)
            sem_props.push_back("feat_" + std::to_string(k));
        std::string sem_bytes = ply_header_string(scene.sem->size(), sem_props);
        for (const SemanticGaussian& s : *scene.sem) {
            for (int k = 0; k < 3; ++k)
                append_f32(sem_bytes, float(s.mu[k]));
            append_f32(sem_bytes, float(s.scale_iso));
            append_f32(sem_bytes, float(s.opacity));
            for (int k = 0; k < scene.feat_dim; ++k)
                append_f32(sem_bytes, float(s.feat[k]));
        }
        atomic_write(*sem_path, [&](const fs::path& tmp) { write_file(tmp, sem_bytes); });
    }
}

// ---- tensor files ------------------------------------------------------

namespace {

void check_magic(const std::string& bytes, const char* magic, const fs::path& path) {
    need_bytes(bytes, 0, 8, path, "header");
    if (std::memcmp(bytes.data(), magic, 4) != 0)
        throw DataError(path.string() + ": bad magic at byte 0 (expected " + magic + ")");
    const uint32_t version = read_u32(bytes, 4);
    if (version != 1)
        throw DataError(path.string() + ": unsupported version " + std::to_string(version) + " at byte 4");
}

} // namespace

FeatureMap read_fmap(const fs::path& path) {
    const std::string bytes = read_file(path);
    check_magic(bytes, "FMAP", path);
    need_bytes(bytes, 8, 12, path, "dims");
    const uint32_t h = read_u32(bytes, 8), w = read_u32(bytes, 12), d = read_u32(bytes, 16);
    const size_t count = size_t(h) * w * d;
    need_bytes(bytes, 20, count * 4, path, "payload");
    FeatureMap map = FeatureMap::zeros(int(h), int(w), int(d));
    for (size_t i = 0; i < count; ++i)
        map.data[i] = double(read_f32(bytes, 20 + i * 4));
    return map;
}

void write_fmap(const FeatureMap& map, const fs::path& path) {
    std::string bytes = "FMAP";
    append_u32(bytes, 1);
    append_u32(bytes, uint32_t(map.height));
    append_u32(bytes, uint32_t(map.width));
    append_u32(bytes, uint32_t(map.dim));
    for (double v : map.data)
        append_f32(bytes, float(v));
    atomic_write(path, [&](const fs::path& tmp) { write_file(tmp, bytes); });
}

PointMap read_pmap(const fs::path& path) {
    const std::string bytes = read_file(path);
    check_magic(bytes, "PMAP", path);
    need_bytes(bytes, 8, 8, path, "dims");
    const uint32_t h = read_u32(bytes, 8), w = read_u32(bytes, 12);
    const size_t n_px = size_t(h) * w;
    need_bytes(bytes, 16, n_px * 12 + n_px, path, "payload");
    PointMap map = PointMap::zeros(int(h), int(w));
    for (size_t i = 0; i < n_px * 3; ++i)
        map.xyz[i] = double(read_f32(bytes, 16 + i * 4));
    for (size_t i = 0; i < n_px; ++i)
        map.valid[i] = uint8_t(bytes[16 + n_px * 12 + i]);
    return map;
}

void write_pmap(const PointMap& map, const fs::path& path) {
    std::string bytes = "PMAP";
    append_u32(bytes, 1);
    append_u32(bytes, uint32_t(map.height));
    append_u32(bytes, uint32_t(map.width));
    for (double v : map.xyz)
        append_f32(bytes, float(v));
    bytes.append(reinterpret_cast<const char*>(map.valid.data()), map.valid.size());
    atomic_write(path, [&](const fs::path& tmp) { write_file(tmp, bytes); });
}

InstanceMask read_imsk(const fs::path& path) {
    const std::string bytes = read_file(path);
    check_magic(bytes, "IMSK", path);
    need_bytes(bytes, 8, 8, path, "dims");
    const uint32_t h = read_u32(bytes, 8), w = read_u32(bytes, 12);
    const size_t n_px = size_t(h) * w;
    need_bytes(bytes, 16, n_px * 2, path, "payload");
    InstanceMask mask = InstanceMask::zeros(int(h), int(w));
    for (size_t i = 0; i < n_px; ++i) {
        uint16_t v;
        std::memcpy(&v, bytes.data() + 16 + i * 2, 2);
        mask.data[i] = v;
    }
    return mask;
}

void write_imsk(const InstanceMask& mask, const fs::path& path) {
    std::string bytes = "IMSK";
    append_u32(bytes, 1);
    append_u32(bytes, uint32_t(mask.height));
    append_u32(bytes, uint32_t(mask.width));
    for (uint32_t v : mask.data) {
        if (v > 0xffff)
            throw DataError("write_imsk: instance id " + std::to_string(v) + " exceeds u16");
        const uint16_t u = uint16_t(v);
        bytes.append(reinterpret_cast<const char*>(&u), 2);
    }
    atomic_write(path, [&](const fs::path& tmp) { write_file(tmp, bytes); });
}

// ---- cameras, vectors, config -------------------------------------------

std::vector<Camera> read_cameras(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (!doc.contains("views") || !doc["views"].is_array())
        throw DataError(path.string() + ": missing 'views' array");
    std::vector<Camera> cams;
    for (const json& view : doc["views"]) {
        Camera cam;
        const auto& intr = view.at("intrinsics");
        if (!intr.is_array() || intr.size() != 4)
            throw DataError(path.string() + ": intrinsics must be [fx,fy,cx,cy]");
        cam.fx = intr[0];
        cam.fy = intr[1];
        cam.cx = intr[2];
        cam.cy = intr[3];
        const auto& mat = view.at("world_to_cam");
        if (!mat.is_array() || mat.size() != 16)
            throw DataError(path.string() + ": world_to_cam must hold 16 row-major values");
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c)
                cam.world_to_cam(r, c) = mat[r * 4 + c];
        cam.width = view.at("width");
        cam.height = view.at("height");
        if (!(cam.fx > 0.0) || !(cam.fy > 0.0))
            throw DataError(path.string() + ": focal lengths must be positive");
        const Mat3 r = cam.rotation();
        if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-5 || r.determinant() < 0.0)
            throw DataError(path.string() + ": world_to_cam rotation is not orthonormal (det +1)");
        cams.push_back(cam);
    }
    return cams;
}

void write_cameras(const std::vector<Camera>& cams, const fs::path& path) {
    json views = json::array();
    for (const Camera& cam : cams) {
        json view;
        view["intrinsics"] = {cam.fx, cam.fy, cam.cx, cam.cy};
        std::vector<double> mat(16);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c)
                mat[r * 4 + c] = cam.world_to_cam(r, c);
        view["world_to_cam"] = mat;
        view["width"] = cam.width;
        view["height"] = cam.height;
        views.push_back(view);
    }
    const std::string text = json{{"views", views}}.dump(2) + "\n";
    atomic_write(path, [&](const fs::path& tmp) { write_file(tmp, text); });
}

std::vector<double> read_vec(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() % 4 != 0)
        throw DataError(path.string() + ": size " + std::to_string(bytes.size()) +
                        " is not a multiple of 4");
    std::vector<double> out(bytes.size() / 4);
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = double(read_f32(bytes, i * 4));
    return out;
}

void write_vec(const std::vector<double>& vec, const fs::path& path) {
    std::string bytes;
    bytes.reserve(vec.size() * 4);
    for (double v : vec)
        append_f32(bytes, float(v));
    atomic_write(path, [&](const fs::path& tmp) { write_file(tmp, bytes); });
}

void atomic_write(const fs::path& path, const std::function<void(const fs::path&)>& writer) {
    fs::path tmp = path;
    tmp += ".tmp";
    writer(tmp);
    fs::rename(tmp, path);
}

LossConfig read_loss_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    LossConfig cfg;
    cfg.eta = doc.value("eta", cfg.eta);
    cfg.lambda_depth = doc.value("lambda_depth", cfg.lambda_depth);
    cfg.lambda_pose = doc.value("lambda_pose", cfg.lambda_pose);
    cfg.lambda_inst = doc.value("lambda_inst", cfg.lambda_inst);
    cfg.alpha = doc.value("alpha", cfg.alpha);
    cfg.tau = doc.value("tau", cfg.tau);
    if (cfg.eta < 0.0 || cfg.eta > 1.0 || !(cfg.alpha > 0.0) || cfg.tau < 0.0 || cfg.tau > 1.0)
        throw DataError(path.string() + ": loss config values out of range");
    return cfg;
}

void write_loss_config(const LossConfig& cfg, const fs::path& path) {
    const json doc = {{"eta", cfg.eta},         {"lambda_depth", cfg.lambda_depth},
                      {"lambda_pose", cfg.lambda_pose}, {"lambda_inst", cfg.lambda_inst},
                      {"alpha", cfg.alpha},     {"tau", cfg.tau}};
    const std::string text = doc.dump(2) + "\n";
    atomic_write(path, [&](const fs::path& tmp) { write_file(tmp, text); });
}

FitConfig read_fit_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    FitConfig cfg;
    cfg.iterations = doc.value("iterations", cfg.iterations);
    cfg.lr_mu = doc.value("lr_mu", cfg.lr_mu);
    cfg.lr_log_scale = doc.value("lr_log_scale", cfg.lr_log_scale);
    cfg.lr_rot = doc.value("lr_rot", cfg.lr_rot);
    cfg.lr_logit_opacity = doc.value("lr_logit_opacity", cfg.lr_logit_opacity);
    cfg.lr_sh = doc.value("lr_sh", cfg.lr_sh);
    cfg.lr_feat = doc.value("lr_feat", cfg.lr_feat);
    cfg.beta1 = doc.value("beta1", cfg.beta1);
    cfg.beta2 = doc.value("beta2", cfg.beta2);
    cfg.adam_eps = doc.value("adam_eps", cfg.adam_eps);
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.log_every = doc.value("log_every", cfg.log_every);
    cfg.threads = doc.value("threads", cfg.threads);
    if (cfg.iterations < 1 || !(cfg.beta1 > 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 > 0.0 && cfg.beta2 < 1.0))
        throw DataError(path.string() + ": fit config values out of range");
    return cfg;
}

void write_fit_config(const FitConfig& cfg, const fs::path& path) {
    const json doc = {{"iterations", cfg.iterations},
                      {"lr_mu", cfg.lr_mu},
                      {"lr_log_scale", cfg.lr_log_scale},
                      {"lr_rot", cfg.lr_rot},
                      {"lr_logit_opacity", cfg.lr_logit_opacity},
                      {"lr_sh", cfg.lr_sh},
                      {"lr_feat", cfg.lr_feat},
                      {"beta1", cfg.beta1},
                      {"beta2", cfg.beta2},
                      {"adam_eps", cfg.adam_eps},
                      {"seed", cfg.seed},
                      {"log_every", cfg.log_every},
                      {"threads", cfg.threads}};
    const std::string text = doc.dump(2) + "\n";
    atomic_write(path, [&](const fs::path& tmp) { write_file(tmp, text); });
}

} // namespace fleg
