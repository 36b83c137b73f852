#include "gsr/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "gsr/core.hpp"

namespace gsr {
namespace {

using nlohmann::json;

void append_bytes(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
}

template <typename T>
void append_pod(std::vector<std::uint8_t>& buf, T v) {
    append_bytes(buf, &v, sizeof(T));
}

struct Reader {
    const std::uint8_t* p;
    std::size_t left;
    std::string what;

    void need(std::size_t n) const {
        if (left < n) throw IoError(what + ": truncated file");
    }
    void read(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, p, n);
        p += n;
        left -= n;
    }
    template <typename T>
    T pod() {
        T v;
        read(&v, sizeof(T));
        return v;
    }
};

} // namespace

void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
    const std::string tmp = path + ".partial";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!f) throw IoError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw IoError("rename failed: " + tmp + " -> " + path + " (" +
                      std::strerror(errno) + ")");
    }
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open: " + path);
    const auto size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(buf.data()), size);
    if (!f) throw IoError("read failed: " + path);
    return buf;
}

// --- Scene container ---------------------------------------------------------

namespace {
constexpr char kSceneMagic[4] = {'G', 'S', 'P', 'L'};
constexpr std::uint32_t kSceneVersion = 1;
constexpr char kDepthMagic[4] = {'D', 'P', 'T', 'H'};
} // namespace

void save_scene(const std::string& path, const GaussianScene& scene) {
    std::vector<std::uint8_t> buf;
    const std::size_t n = scene.size();
    buf.reserve(16 + n * 14 * 4 + scene.features.size() * 4);
    append_bytes(buf, kSceneMagic, 4);
    append_pod<std::uint32_t>(buf, kSceneVersion);
    append_pod<std::uint64_t>(buf, static_cast<std::uint64_t>(n));
    append_pod<float>(buf, static_cast<float>(scene.scene_extent));
    for (const auto& g : scene.gaussians) {
        const float rec[14] = {
            static_cast<float>(g.position.x),  static_cast<float>(g.position.y),
            static_cast<float>(g.position.z),  static_cast<float>(g.log_scale.x),
            static_cast<float>(g.log_scale.y), static_cast<float>(g.log_scale.z),
            static_cast<float>(g.rotation.w),  static_cast<float>(g.rotation.x),
            static_cast<float>(g.rotation.y),  static_cast<float>(g.rotation.z),
            static_cast<float>(g.color.x),     static_cast<float>(g.color.y),
            static_cast<float>(g.color.z),     static_cast<float>(g.opacity_logit)};
        append_bytes(buf, rec, sizeof(rec));
    }
    if (scene.feat_dim > 0) {
        append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(scene.feat_dim));
        for (double v : scene.features) append_pod<float>(buf, static_cast<float>(v));
    }
    write_file_atomic(path, buf.data(), buf.size());
}

GaussianScene load_scene(const std::string& path) {
    const auto buf = read_file(path);
    Reader r{buf.data(), buf.size(), "scene file " + path};
    char magic[4];
    r.read(magic, 4);
    if (std::memcmp(magic, kSceneMagic, 4) != 0) {
        throw IoError(path + ": not a scene file (bad magic)");
    }
    const auto version = r.pod<std::uint32_t>();
    if (version != kSceneVersion) {
        throw IoError(path + ": unsupported scene format version " + std::to_string(version));
    }
    const auto n = r.pod<std::uint64_t>();
    GaussianScene scene;
    scene.scene_extent = r.pod<float>();
    scene.gaussians.resize(n);
    for (auto& g : scene.gaussians) {
        float rec[14];
        r.read(rec, sizeof(rec));
        g.position = {rec[0], rec[1], rec[2]};
        g.log_scale = {rec[3], rec[4], rec[5]};
        g.rotation = {rec[6], rec[7], rec[8], rec[9]};
        g.color = {rec[10], rec[11], rec[12]};
        g.opacity_logit = rec[13];
    }
    if (r.left > 0) {
        const auto feat_dim = r.pod<std::uint32_t>();
        scene.feat_dim = static_cast<int>(feat_dim);
        scene.features.resize(n * feat_dim);
        for (auto& v : scene.features) v = r.pod<float>();
    }
    if (r.left != 0) throw IoError(path + ": trailing bytes");
    renormalize_rotations(scene);
    validate_scene(scene);
    return scene;
}

// --- Cameras -----------------------------------------------------------------

void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
    json arr = json::array();
    for (const auto& c : cams) {
        json j;
        j["fx"] = c.fx;
        j["fy"] = c.fy;
        j["cx"] = c.cx;
        j["cy"] = c.cy;
        j["width"] = c.width;
        j["height"] = c.height;
        json m = json::array();
        for (int r = 0; r < 3; ++r) {
            for (int col = 0; col < 3; ++col) m.push_back(c.rotation(r, col));
            m.push_back(c.translation[r]);
        }
        j["world_to_cam"] = m;
        arr.push_back(j);
    }
    const std::string text = arr.dump(2) + "\n";
    write_file_atomic(path, text.data(), text.size());
}

std::vector<Camera> load_cameras(const std::string& path) {
    const auto buf = read_file(path);
    json arr;
    try {
        arr = json::parse(buf.begin(), buf.end());
    } catch (const json::exception& e) {
        throw IoError(path + ": invalid camera JSON: " + e.what());
    }
    if (!arr.is_array()) throw IoError(path + ": camera file must be a JSON array");
    std::vector<Camera> cams;
    for (const auto& j : arr) {
        Camera c;
        try {
            c.fx = j.at("fx").get<double>();
            c.fy = j.at("fy").get<double>();
            c.cx = j.at("cx").get<double>();
            c.cy = j.at("cy").get<double>();
            c.width = j.at("width").get<int>();
            c.height = j.at("height").get<int>();
            const auto& m = j.at("world_to_cam");
            if (!m.is_array() || m.size() != 12) {
                throw IoError(path + ": world_to_cam must have 12 entries");
            }
            for (int r = 0; r < 3; ++r) {
                for (int col = 0; col < 3; ++col) {
                    c.rotation(r, col) = m[static_cast<std::size_t>(r) * 4 + col].get<double>();
                }
                c.translation[r] = m[static_cast<std::size_t>(r) * 4 + 3].get<double>();
            }
        } catch (const json::exception& e) {
            throw IoError(path + ": invalid camera entry: " + e.what());
        }
        // Validate to 1e-5, then pull onto the rotation manifold exactly.
        const Mat3 rrt = c.rotation * c.rotation.transposed();
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) {
                const double want = (r == col) ? 1.0 : 0.0;
                if (std::abs(rrt(r, col) - want) > 1e-5) {
                    throw IoError(path + ": camera rotation not orthonormal within 1e-5");
                }
            }
        c.rotation = quat_to_rotmat(rotmat_to_quat(c.rotation));
        cams.push_back(c);
    }
    return cams;
}

// --- Depth ---------------------------------------------------------------------

void save_depth(const std::string& path, const Image& depth) {
    if (depth.channels != 1) throw UsageError("save_depth expects a 1-channel image");
    std::vector<std::uint8_t> buf;
    buf.reserve(12 + depth.data.size() * 4);
    append_bytes(buf, kDepthMagic, 4);
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(depth.width));
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(depth.height));
    for (double v : depth.data) append_pod<float>(buf, static_cast<float>(v));
    write_file_atomic(path, buf.data(), buf.size());
}

Image load_depth(const std::string& path) {
    const auto buf = read_file(path);
    Reader r{buf.data(), buf.size(), "depth file " + path};
    char magic[4];
    r.read(magic, 4);
    if (std::memcmp(magic, kDepthMagic, 4) != 0) {
        throw IoError(path + ": not a depth file (bad magic)");
    }
    const auto w = r.pod<std::uint32_t>();
    const auto h = r.pod<std::uint32_t>();
    Image img(static_cast<int>(w), static_cast<int>(h), 1);
    for (auto& v : img.data) v = r.pod<float>();
    if (r.left != 0) throw IoError(path + ": trailing bytes");
    return img;
}

// --- Tensor container ------------------------------------------------------------

const TensorBlock& TensorFile::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw IoError("tensor file: missing tensor '" + name + "'");
}

bool TensorFile::has(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

void save_tensor_file(const std::string& path, const TensorFile& tf) {
    json header;
    header["format_version"] = tf.format_version;
    header["meta"] = tf.meta_json.empty() ? json::object() : json::parse(tf.meta_json);
    json manifest = json::array();
    for (const auto& t : tf.tensors) {
        json entry;
        entry["name"] = t.name;
        entry["shape"] = t.shape;
        manifest.push_back(entry);
    }
    header["tensors"] = manifest;
    const std::string htext = header.dump();

    std::vector<std::uint8_t> buf;
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(htext.size()));
    append_bytes(buf, htext.data(), htext.size());
    for (const auto& t : tf.tensors) {
        if (t.data.size() != t.element_count()) {
            throw IoError("tensor '" + t.name + "': data size does not match shape");
        }
        append_bytes(buf, t.data.data(), t.data.size() * sizeof(float));
    }
    write_file_atomic(path, buf.data(), buf.size());
}

TensorFile load_tensor_file(const std::string& path) {
    const auto buf = read_file(path);
    Reader r{buf.data(), buf.size(), "tensor file " + path};
    const auto hlen = r.pod<std::uint32_t>();
    r.need(hlen);
    json header;
    try {
        header = json::parse(r.p, r.p + hlen);
    } catch (const json::exception& e) {
        throw IoError(path + ": invalid tensor header: " + e.what());
    }
    r.p += hlen;
    r.left -= hlen;

    TensorFile tf;
    try {
        tf.format_version = header.at("format_version").get<int>();
        tf.meta_json = header.value("meta", json::object()).dump();
        for (const auto& entry : header.at("tensors")) {
            TensorBlock t;
            t.name = entry.at("name").get<std::string>();
            t.shape = entry.at("shape").get<std::vector<std::uint64_t>>();
            t.data.resize(t.element_count());
            r.read(t.data.data(), t.data.size() * sizeof(float));
            tf.tensors.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw IoError(path + ": malformed tensor header: " + e.what());
    }
    if (r.left != 0) throw IoError(path + ": trailing bytes");
    return tf;
}

} // namespace gsr
