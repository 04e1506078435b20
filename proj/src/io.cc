#include "semloc/io.h"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <set>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace semloc::io {

using nlohmann::json;

static_assert(sizeof(float) == 4);

namespace {

class Writer {
  public:
    void magic(const char (&m)[5]) { bytes_.insert(bytes_.end(), m, m + 4); }
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void str(const std::string &s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    Bytes take() { return std::move(bytes_); }

  private:
    Bytes bytes_;
};

class Reader {
  public:
    Reader(const Bytes &b, std::string source) : b_(b), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string &what) const {
        throw DataError(source_ + ": offset " + std::to_string(pos_) + ": " + what);
    }
    // Reports the offset of the value just read.
    [[noreturn]] void fail_back(size_t n, const std::string &what) {
        pos_ -= n;
        fail(what);
    }
    void need(size_t n) const {
        if (b_.size() - pos_ < n) fail("unexpected end of data");
    }
    void magic(const char (&m)[5]) {
        need(4);
        if (std::memcmp(b_.data() + pos_, m, 4) != 0) fail(std::string("bad magic, expected ") + m);
        pos_ += 4;
    }
    std::uint8_t u8() {
        need(1);
        return b_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() {
        const float v = std::bit_cast<float>(u32());
        if (!std::isfinite(v)) {
            pos_ -= 4;
            fail("non-finite value");
        }
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char *>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void finish() const {
        if (pos_ != b_.size()) fail("trailing bytes");
    }
    // Guards allocations against corrupt counts.
    void need_records(std::uint64_t count, std::uint64_t record_size) const {
        if (record_size != 0 && count > (b_.size() - pos_) / record_size) fail("record count exceeds data size");
    }

  private:
    const Bytes &b_;
    std::string source_;
    size_t pos_ = 0;
};

std::uint32_t checked_u32(size_t v, const char *what) {
    if (v > 0xffffffffULL) throw std::invalid_argument(std::string(what) + " too large for the file format");
    return static_cast<std::uint32_t>(v);
}

} // namespace

Bytes encode_depth(const DepthMap &d) {
    Writer w;
    w.magic("DMP1");
    w.u32(checked_u32(static_cast<size_t>(d.width), "width"));
    w.u32(checked_u32(static_cast<size_t>(d.height), "height"));
    for (double v : d.values) {
        if (!std::isfinite(v)) throw std::invalid_argument("depth map holds a non-finite value");
        w.f32(v);
    }
    return w.take();
}

DepthMap decode_depth(const Bytes &b, const std::string &source) {
    Reader r(b, source);
    r.magic("DMP1");
    const std::uint32_t w = r.u32(), h = r.u32();
    r.need_records(static_cast<std::uint64_t>(w) * h, 4);
    DepthMap d(static_cast<int>(w), static_cast<int>(h), 0.0);
    for (double &v : d.values) v = r.f32();
    r.finish();
    return d;
}

Bytes encode_labels(const LabelImage &l) {
    Writer w;
    w.magic("LBL1");
    w.u32(checked_u32(static_cast<size_t>(l.width), "width"));
    w.u32(checked_u32(static_cast<size_t>(l.height), "height"));
    for (std::uint8_t v : l.values) w.u8(v);
    return w.take();
}

LabelImage decode_labels(const Bytes &b, const std::string &source) {
    Reader r(b, source);
    r.magic("LBL1");
    const std::uint32_t w = r.u32(), h = r.u32();
    r.need_records(static_cast<std::uint64_t>(w) * h, 1);
    LabelImage l(static_cast<int>(w), static_cast<int>(h), 0);
    for (auto &v : l.values) {
        v = r.u8();
        if (!is_valid_label(v)) r.fail_back(1, "label outside 0..18 and 255");
    }
    r.finish();
    return l;
}

Bytes encode_features(const FeatureSet &f) {
    f.validate();
    Writer w;
    w.magic("FEA1");
    w.str(f.family);
    w.u32(checked_u32(f.size(), "keypoint count"));
    w.u32(checked_u32(static_cast<size_t>(f.descriptors.rows()), "descriptor dimension"));
    for (size_t i = 0; i < f.size(); ++i) {
        w.f32(f.locations[i].x());
        w.f32(f.locations[i].y());
        for (Eigen::Index k = 0; k < f.descriptors.rows(); ++k) w.f32(f.descriptors(k, static_cast<Eigen::Index>(i)));
    }
    return w.take();
}

FeatureSet decode_features(const Bytes &b, const std::string &source) {
    Reader r(b, source);
    r.magic("FEA1");
    FeatureSet f;
    f.family = r.str();
    const std::uint32_t count = r.u32(), dim = r.u32();
    r.need_records(count, 4ULL * (2ULL + dim));
    f.locations.resize(count);
    f.descriptors.resize(dim, count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const float x = r.f32();
        const float y = r.f32();
        f.locations[i] = ImagePoint(x, y);
        for (std::uint32_t k = 0; k < dim; ++k) f.descriptors(k, i) = r.f32();
    }
    r.finish();
    return f;
}

Bytes encode_global(const Eigen::VectorXd &g) {
    Writer w;
    w.magic("GDS1");
    w.u32(checked_u32(static_cast<size_t>(g.size()), "descriptor dimension"));
    for (Eigen::Index i = 0; i < g.size(); ++i) w.f32(g[i]);
    return w.take();
}

Eigen::VectorXd decode_global(const Bytes &b, const std::string &source) {
    Reader r(b, source);
    r.magic("GDS1");
    const std::uint32_t dim = r.u32();
    r.need_records(dim, 4);
    Eigen::VectorXd g(dim);
    for (std::uint32_t i = 0; i < dim; ++i) g[i] = r.f32();
    r.finish();
    return g;
}

Bytes encode_map(const DenseMap &m) {
    Writer w;
    w.magic("MAP1");
    w.u32(checked_u32(m.size(), "map size"));
    for (const auto &p : m) {
        if (p.support < 0 || p.support > 0xffff) throw std::invalid_argument("map point support out of u16 range");
        for (int k = 0; k < 3; ++k) w.f32(p.position[k]);
        w.u8(p.label);
        for (int k = 0; k < 3; ++k) w.f32(p.cone.v_l[k]);
        for (int k = 0; k < 3; ++k) w.f32(p.cone.v_u[k]);
        w.f32(p.cone.theta);
        w.f32(p.cone.d_min);
        w.f32(p.cone.d_max);
        w.u16(static_cast<std::uint16_t>(p.support));
    }
    return w.take();
}

DenseMap decode_map(const Bytes &b, const std::string &source) {
    constexpr std::uint64_t kRecord = 12 + 1 + 12 + 12 + 4 + 4 + 4 + 2;
    Reader r(b, source);
    r.magic("MAP1");
    const std::uint32_t count = r.u32();
    r.need_records(count, kRecord);
    DenseMap m(count);
    for (auto &p : m) {
        for (int k = 0; k < 3; ++k) p.position[k] = r.f32();
        p.label = r.u8();
        if (!is_valid_label(p.label)) r.fail_back(1, "label outside 0..18 and 255");
        for (int k = 0; k < 3; ++k) p.cone.v_l[k] = r.f32();
        for (int k = 0; k < 3; ++k) p.cone.v_u[k] = r.f32();
        p.cone.theta = r.f32();
        p.cone.d_min = r.f32();
        p.cone.d_max = r.f32();
        p.support = r.u16();
        if (!(p.cone.d_min > 0 && p.cone.d_min <= p.cone.d_max)) r.fail("invalid visibility distances");
        p.cone.v_m = VisibilityCone::mean_direction(p.cone.v_l, p.cone.v_u);
    }
    r.finish();
    return m;
}

Bytes read_file(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError(p.string() + ": cannot open file");
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path &p, const Bytes &b) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(p.string() + ": cannot write file");
    out.write(reinterpret_cast<const char *>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!out) throw DataError(p.string() + ": write failed");
}

void write_text(const fs::path &p, const std::string &s) { write_file(p, Bytes(s.begin(), s.end())); }

namespace {
std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> content_lines(const fs::path &p) {
    const Bytes b = read_file(p);
    std::istringstream is(std::string(b.begin(), b.end()));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return lines;
}

bool blank_or_comment(const std::string &line) {
    const auto pos = line.find_first_not_of(" \t\r");
    return pos == std::string::npos || line[pos] == '#';
}
} // namespace

std::string format_camera_line(const CameraLine &c) {
    const Eigen::Quaterniond q = c.pose.quaternion();
    std::string s = std::to_string(c.id);
    for (double v : {c.intrinsics.fx, c.intrinsics.fy, c.intrinsics.cx, c.intrinsics.cy}) s += " " + fmt17(v);
    s += " " + std::to_string(c.intrinsics.width) + " " + std::to_string(c.intrinsics.height);
    for (double v : {q.w(), q.x(), q.y(), q.z(), c.pose.center.x(), c.pose.center.y(), c.pose.center.z()})
        s += " " + fmt17(v);
    return s;
}

CameraLine parse_camera_line(const std::string &line, const std::string &source, size_t line_no) {
    std::istringstream is(line);
    CameraLine c;
    double qw, qx, qy, qz, x, y, z;
    std::string extra;
    if (!(is >> c.id >> c.intrinsics.fx >> c.intrinsics.fy >> c.intrinsics.cx >> c.intrinsics.cy >>
          c.intrinsics.width >> c.intrinsics.height >> qw >> qx >> qy >> qz >> x >> y >> z) ||
        (is >> extra))
        throw DataError(source + ": line " + std::to_string(line_no) + ": expected 14 fields");
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (!(std::abs(q.norm() - 1.0) < 1e-6))
        throw DataError(source + ": line " + std::to_string(line_no) + ": quaternion is not unit length");
    if (!c.intrinsics.valid()) throw DataError(source + ": line " + std::to_string(line_no) + ": invalid intrinsics");
    c.pose = RigidPose::from_quaternion(q, Eigen::Vector3d(x, y, z));
    return c;
}

void write_cameras(const fs::path &p, const std::vector<CameraLine> &cams) {
    std::string s;
    for (const auto &c : cams) s += format_camera_line(c) + "\n";
    write_text(p, s);
}

std::vector<CameraLine> read_cameras(const fs::path &p) {
    std::vector<CameraLine> out;
    const auto lines = content_lines(p);
    for (size_t i = 0; i < lines.size(); ++i)
        if (!blank_or_comment(lines[i])) out.push_back(parse_camera_line(lines[i], p.string(), i + 1));
    return out;
}

void write_intrinsics(const fs::path &p, const std::vector<std::pair<ImageId, CameraIntrinsics>> &cams) {
    std::string s;
    for (const auto &[id, K] : cams) {
        s += std::to_string(id);
        for (double v : {K.fx, K.fy, K.cx, K.cy}) s += " " + fmt17(v);
        s += " " + std::to_string(K.width) + " " + std::to_string(K.height) + "\n";
    }
    write_text(p, s);
}

std::vector<std::pair<ImageId, CameraIntrinsics>> read_intrinsics(const fs::path &p) {
    std::vector<std::pair<ImageId, CameraIntrinsics>> out;
    const auto lines = content_lines(p);
    for (size_t i = 0; i < lines.size(); ++i) {
        if (blank_or_comment(lines[i])) continue;
        std::istringstream is(lines[i]);
        ImageId id;
        CameraIntrinsics K;
        std::string extra;
        if (!(is >> id >> K.fx >> K.fy >> K.cx >> K.cy >> K.width >> K.height) || (is >> extra))
            throw DataError(p.string() + ": line " + std::to_string(i + 1) + ": expected 7 fields");
        if (!K.valid()) throw DataError(p.string() + ": line " + std::to_string(i + 1) + ": invalid intrinsics");
        out.emplace_back(id, K);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Dataset layout

void write_dataset(const fs::path &root, const Dataset &ds, const std::map<ImageId, RigidPose> *ground_truth) {
    fs::create_directories(root);
    json manifest;
    manifest["format"] = "semloc-dataset";
    manifest["version"] = 1;
    json fams = json::array();
    for (const auto &f : ds.families) {
        json jf{{"name", f.name}, {"dim", f.dim}, {"mutual_nn", f.use_mutual_nn}};
        jf["ratio"] = f.ratio ? json(*f.ratio) : json(nullptr);
        fams.push_back(jf);
    }
    manifest["families"] = fams;

    std::vector<CameraLine> cams;
    json db = json::array();
    for (const auto &r : ds.database) {
        const std::string stem = "database/" + std::to_string(r.id);
        json e{{"id", r.id}, {"depth", stem + ".dmp"}, {"labels", stem + ".lbl"}, {"global", stem + ".gds"}};
        write_file(root / (stem + ".dmp"), encode_depth(r.depth));
        write_file(root / (stem + ".lbl"), encode_labels(r.labels));
        write_file(root / (stem + ".gds"), encode_global(r.global.values));
        json feats = json::object();
        for (const auto &[name, set] : r.features) {
            const std::string path = stem + "." + name + ".fea";
            write_file(root / path, encode_features(set));
            feats[name] = path;
        }
        e["features"] = feats;
        db.push_back(e);
        cams.push_back({r.id, r.intrinsics, r.pose});
    }
    write_cameras(root / "database_cameras.txt", cams);
    manifest["database_cameras"] = "database_cameras.txt";
    manifest["database"] = db;

    std::vector<std::pair<ImageId, CameraIntrinsics>> qk;
    json qs = json::array();
    for (const auto &q : ds.queries) {
        const std::string stem = "queries/" + std::to_string(q.id);
        json e{{"id", q.id}, {"condition", condition_name(q.condition)}, {"labels", stem + ".lbl"},
               {"global", stem + ".gds"}};
        write_file(root / (stem + ".lbl"), encode_labels(q.labels));
        write_file(root / (stem + ".gds"), encode_global(q.global.values));
        json feats = json::object();
        for (const auto &[name, set] : q.features) {
            const std::string path = stem + "." + name + ".fea";
            write_file(root / path, encode_features(set));
            feats[name] = path;
        }
        e["features"] = feats;
        qs.push_back(e);
        qk.emplace_back(q.id, q.intrinsics);
    }
    write_intrinsics(root / "query_intrinsics.txt", qk);
    manifest["query_intrinsics"] = "query_intrinsics.txt";
    manifest["queries"] = qs;

    if (ground_truth) {
        std::vector<CameraLine> gt;
        for (const auto &q : ds.queries) {
            auto it = ground_truth->find(q.id);
            if (it != ground_truth->end()) gt.push_back({q.id, q.intrinsics, it->second});
        }
        write_cameras(root / "query_ground_truth.txt", gt);
        manifest["query_ground_truth"] = "query_ground_truth.txt";
    }
    write_text(root / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

fs::path existing(const fs::path &root, const std::string &rel) {
    const fs::path p = root / rel;
    if (!fs::is_regular_file(p)) throw DataError(p.string() + ": referenced file does not exist");
    return p;
}

std::map<std::string, FeatureSet> load_features(const fs::path &root, const json &j) {
    std::map<std::string, FeatureSet> out;
    for (const auto &[name, path] : j.items()) {
        const fs::path p = existing(root, path.get<std::string>());
        FeatureSet f = decode_features(read_file(p), p.string());
        if (f.family != name) throw DataError(p.string() + ": family '" + f.family + "' differs from manifest key");
        out.emplace(name, std::move(f));
    }
    return out;
}

} // namespace

LoadedDataset load_dataset(const fs::path &root) {
    LoadedDataset out;
    Dataset &ds = out.dataset;
    const fs::path mpath = existing(root, "manifest.json");
    json m;
    try {
        const Bytes b = read_file(mpath);
        m = json::parse(b.begin(), b.end());
    } catch (const json::exception &e) {
        throw DataError(mpath.string() + ": " + e.what());
    }
    try {
        if (m.at("version").get<int>() != 1) throw DataError(mpath.string() + ": unsupported manifest version");
        for (const auto &jf : m.at("families")) {
            FeatureFamily f;
            f.name = jf.at("name").get<std::string>();
            f.dim = jf.at("dim").get<int>();
            f.use_mutual_nn = jf.value("mutual_nn", true);
            if (jf.contains("ratio") && !jf["ratio"].is_null()) f.ratio = jf["ratio"].get<double>();
            f.validate();
            ds.families.push_back(f);
        }

        std::map<ImageId, CameraLine> cams;
        for (const auto &c : read_cameras(existing(root, m.at("database_cameras").get<std::string>())))
            if (!cams.emplace(c.id, c).second) throw DataError("database cameras: duplicate id " + std::to_string(c.id));
        std::set<ImageId> ids;
        for (const auto &e : m.at("database")) {
            DatabaseImageRecord r;
            r.id = e.at("id").get<ImageId>();
            if (!ids.insert(r.id).second) throw DataError(mpath.string() + ": duplicate image id " + std::to_string(r.id));
            auto cit = cams.find(r.id);
            if (cit == cams.end()) throw DataError(mpath.string() + ": no camera for image " + std::to_string(r.id));
            r.intrinsics = cit->second.intrinsics;
            r.pose = cit->second.pose;
            const fs::path dp = existing(root, e.at("depth").get<std::string>());
            r.depth = decode_depth(read_file(dp), dp.string());
            const fs::path lp = existing(root, e.at("labels").get<std::string>());
            r.labels = decode_labels(read_file(lp), lp.string());
            const fs::path gp = existing(root, e.at("global").get<std::string>());
            r.global = {r.id, decode_global(read_file(gp), gp.string())};
            r.features = load_features(root, e.at("features"));
            try {
                r.validate();
            } catch (const std::invalid_argument &ex) {
                throw DataError(ex.what());
            }
            ds.database.push_back(std::move(r));
        }

        std::map<ImageId, CameraIntrinsics> qk;
        for (const auto &[id, K] : read_intrinsics(existing(root, m.at("query_intrinsics").get<std::string>())))
            qk[id] = K;
        for (const auto &e : m.at("queries")) {
            QueryRecord q;
            q.id = e.at("id").get<ImageId>();
            if (!ids.insert(q.id).second) throw DataError(mpath.string() + ": duplicate image id " + std::to_string(q.id));
            q.condition = parse_condition(e.at("condition").get<std::string>());
            auto kit = qk.find(q.id);
            if (kit == qk.end()) throw DataError(mpath.string() + ": no intrinsics for query " + std::to_string(q.id));
            q.intrinsics = kit->second;
            const fs::path lp = existing(root, e.at("labels").get<std::string>());
            q.labels = decode_labels(read_file(lp), lp.string());
            if (q.labels.width != q.intrinsics.width || q.labels.height != q.intrinsics.height)
                throw DataError(lp.string() + ": label image size differs from intrinsics");
            const fs::path gp = existing(root, e.at("global").get<std::string>());
            q.global = {q.id, decode_global(read_file(gp), gp.string())};
            q.features = load_features(root, e.at("features"));
            ds.queries.push_back(std::move(q));
        }

        if (m.contains("query_ground_truth"))
            for (const auto &c : read_cameras(existing(root, m["query_ground_truth"].get<std::string>())))
                out.ground_truth[c.id] = c.pose;
    } catch (const json::exception &e) {
        throw DataError(mpath.string() + ": " + e.what());
    } catch (const std::invalid_argument &e) {
        throw DataError(mpath.string() + ": " + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Config

namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string &s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

double to_double(const std::string &v, const std::string &key) {
    size_t used = 0;
    double d = 0;
    try {
        d = std::stod(v, &used);
    } catch (...) {
        used = 0;
    }
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument("config: '" + key + "' expects a number");
    return d;
}

long to_long(const std::string &v, const std::string &key) {
    size_t used = 0;
    long d = 0;
    try {
        d = std::stol(v, &used);
    } catch (...) {
        used = 0;
    }
    if (used != v.size()) throw std::invalid_argument("config: '" + key + "' expects an integer");
    return d;
}

int to_int(const std::string &v, const std::string &key) {
    const long l = to_long(v, key);
    if (l < std::numeric_limits<int>::min() || l > std::numeric_limits<int>::max())
        throw std::invalid_argument("config: '" + key + "' is out of range");
    return static_cast<int>(l);
}

bool to_bool(const std::string &v, const std::string &key) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw std::invalid_argument("config: '" + key + "' expects true or false");
}

std::vector<ThresholdBucket> to_buckets(const std::string &v, const std::string &key) {
    std::vector<ThresholdBucket> out;
    for (const auto &item : split(v, ',')) {
        const auto parts = split(item, ':');
        if (parts.size() != 2) throw std::invalid_argument("config: '" + key + "' expects meters:degrees pairs");
        ThresholdBucket b{to_double(parts[0], key), to_double(parts[1], key), ""};
        if (!(b.max_position > 0 && b.max_orientation > 0))
            throw std::invalid_argument("config: '" + key + "' bounds must be positive");
        b.label = "(" + parts[0] + "m, " + parts[1] + "deg)";
        out.push_back(b);
    }
    if (out.empty()) throw std::invalid_argument("config: '" + key + "' is empty");
    return out;
}

std::string buckets_text(const std::vector<ThresholdBucket> &bs) {
    std::string s;
    char buf[64];
    for (size_t i = 0; i < bs.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s%g:%g", i ? ", " : "", bs[i].max_position, bs[i].max_orientation);
        s += buf;
    }
    return s;
}

void set_ransac(RansacConfig &r, const std::string &field, const std::string &v, const std::string &key) {
    if (field == "threshold_px") r.inlier_threshold_px = to_double(v, key);
    else if (field == "max_iterations") r.max_iterations = to_int(v, key);
    else if (field == "confidence") r.confidence = to_double(v, key);
    else if (field == "min_inliers") r.min_inliers = to_int(v, key);
    else if (field == "adaptive") r.adaptive_stopping = to_bool(v, key);
    else if (field == "min_sample_spread_px") r.min_sample_spread_px = to_double(v, key);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

} // namespace

void PipelineConfig::apply_family_overrides(std::vector<FeatureFamily> &families) const {
    for (const auto &[name, o] : family_overrides) {
        auto it = std::find_if(families.begin(), families.end(), [&](const FeatureFamily &f) { return f.name == name; });
        if (it == families.end()) throw std::invalid_argument("config: override for unknown family '" + name + "'");
        if (o.mutual_nn) it->use_mutual_nn = *o.mutual_nn;
        if (o.ratio) it->ratio = *o.ratio;
        it->validate();
    }
}

PipelineConfig parse_config(const std::string &text, const std::string &source) {
    PipelineConfig cfg;
    std::istringstream is(text);
    std::string raw;
    size_t line_no = 0;
    std::set<std::string> seen;
    while (std::getline(is, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ": line " + std::to_string(line_no) + ": ";
        if (eq == std::string::npos) throw std::invalid_argument(where + "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string v = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) throw std::invalid_argument(where + "duplicate key '" + key + "'");
        try {
            auto &L = cfg.localizer;
            if (key == "seed") L.seed = static_cast<std::uint64_t>(to_long(v, key));
            else if (key == "depth_filter.tau") cfg.map.filter.tau = to_double(v, key);
            else if (key == "depth_filter.min_neighbors") cfg.map.filter.min_consistent_neighbors = to_int(v, key);
            else if (key == "depth_filter.neighbor_count") cfg.map.filter.neighbor_count = to_int(v, key);
            else if (key == "fusion.voxel_size") cfg.map.voxel_size = to_double(v, key);
            else if (key == "map.unstable_classes") {
                cfg.map.unstable.clear();
                for (const auto &c : split(v, ',')) {
                    const int id = to_int(c, key);
                    if (id < 0 || id >= cityscapes::kNumClasses) throw std::invalid_argument("config: class id out of range");
                    cfg.map.unstable.insert(static_cast<std::uint8_t>(id));
                }
            } else if (key == "gate.distance_margin") L.gate.distance_margin = to_double(v, key);
            else if (key == "gate.angle_margin") L.gate.angle_margin = to_double(v, key);
            else if (key == "retrieval.top_k_day") L.retrieval.top_k_day = to_int(v, key);
            else if (key == "retrieval.top_k_night") L.retrieval.top_k_night = to_int(v, key);
            else if (key.rfind("ransac.", 0) == 0) set_ransac(L.final_ransac, key.substr(7), v, key);
            else if (key.rfind("temporary.", 0) == 0) set_ransac(L.temporary, key.substr(10), v, key);
            else if (key == "refine.max_iterations") L.refine.max_iterations = to_int(v, key);
            else if (key == "refine.relative_tol") L.refine.relative_decrease_tol = to_double(v, key);
            else if (key == "localize.score_floor") L.score_floor = to_double(v, key);
            else if (key == "localize.semantic_weighting") L.semantic_weighting = to_bool(v, key);
            else if (key == "localize.families") {
                L.families.clear();
                for (const auto &f : split(v, ',')) L.families.insert(f);
            } else if (key == "evaluate.day_buckets") cfg.day_buckets = to_buckets(v, key);
            else if (key == "evaluate.night_buckets") cfg.night_buckets = to_buckets(v, key);
            else if (key.rfind("family.", 0) == 0) {
                const auto dot = key.rfind('.');
                const std::string name = key.substr(7, dot - 7);
                const std::string field = key.substr(dot + 1);
                if (name.empty() || dot <= 7) throw std::invalid_argument("config: unknown key '" + key + "'");
                if (field == "mutual_nn") cfg.family_overrides[name].mutual_nn = to_bool(v, key);
                else if (field == "ratio")
                    cfg.family_overrides[name].ratio =
                        (v == "off" || v == "none") ? std::optional<double>() : std::optional<double>(to_double(v, key));
                else throw std::invalid_argument("config: unknown key '" + key + "'");
            } else throw std::invalid_argument("config: unknown key '" + key + "'");
        } catch (const std::invalid_argument &e) {
            throw std::invalid_argument(where + e.what());
        }
    }
    try {
        cfg.map.filter.validate();
        if (!(cfg.map.voxel_size > 0)) throw std::invalid_argument("fusion.voxel_size must be positive");
        cfg.localizer.gate.validate();
        cfg.localizer.temporary.validate();
        cfg.localizer.final_ransac.validate();
        if (cfg.localizer.retrieval.top_k_day < 1 || cfg.localizer.retrieval.top_k_night < 1)
            throw std::invalid_argument("retrieval top-k must be >= 1");
        if (cfg.localizer.refine.max_iterations < 0) throw std::invalid_argument("refine.max_iterations must be >= 0");
    } catch (const std::invalid_argument &e) {
        throw std::invalid_argument(source + ": " + e.what());
    }
    return cfg;
}

PipelineConfig load_config(const fs::path &p) {
    const Bytes b = read_file(p);
    return parse_config(std::string(b.begin(), b.end()), p.string());
}

std::string render_config(const PipelineConfig &cfg) {
    std::ostringstream os;
    const auto &L = cfg.localizer;
    const auto ransac = [&](const char *prefix, const RansacConfig &r) {
        os << prefix << ".threshold_px = " << fmt17(r.inlier_threshold_px) << "\n";
        os << prefix << ".max_iterations = " << r.max_iterations << "\n";
        os << prefix << ".confidence = " << fmt17(r.confidence) << "\n";
        os << prefix << ".adaptive = " << (r.adaptive_stopping ? "true" : "false") << "\n";
        os << prefix << ".min_inliers = " << r.min_inliers << "\n";
        os << prefix << ".min_sample_spread_px = " << fmt17(r.min_sample_spread_px) << "\n";
    };
    os << "seed = " << L.seed << "\n";
    os << "depth_filter.tau = " << fmt17(cfg.map.filter.tau) << "\n";
    os << "depth_filter.min_neighbors = " << cfg.map.filter.min_consistent_neighbors << "\n";
    os << "depth_filter.neighbor_count = " << cfg.map.filter.neighbor_count << "\n";
    os << "fusion.voxel_size = " << fmt17(cfg.map.voxel_size) << "\n";
    os << "map.unstable_classes = ";
    bool first = true;
    for (auto c : cfg.map.unstable) {
        os << (first ? "" : ", ") << static_cast<int>(c);
        first = false;
    }
    os << "\n";
    os << "gate.distance_margin = " << fmt17(L.gate.distance_margin) << "\n";
    os << "gate.angle_margin = " << fmt17(L.gate.angle_margin) << "\n";
    os << "retrieval.top_k_day = " << L.retrieval.top_k_day << "\n";
    os << "retrieval.top_k_night = " << L.retrieval.top_k_night << "\n";
    ransac("temporary", L.temporary);
    ransac("ransac", L.final_ransac);
    os << "refine.max_iterations = " << L.refine.max_iterations << "\n";
    os << "refine.relative_tol = " << fmt17(L.refine.relative_decrease_tol) << "\n";
    os << "localize.score_floor = " << fmt17(L.score_floor) << "\n";
    os << "localize.semantic_weighting = " << (L.semantic_weighting ? "true" : "false") << "\n";
    if (!L.families.empty()) {
        os << "localize.families = ";
        first = true;
        for (const auto &f : L.families) {
            os << (first ? "" : ", ") << f;
            first = false;
        }
        os << "\n";
    }
    for (const auto &[name, o] : cfg.family_overrides) {
        if (o.mutual_nn) os << "family." << name << ".mutual_nn = " << (*o.mutual_nn ? "true" : "false") << "\n";
        if (o.ratio) os << "family." << name << ".ratio = " << (*o.ratio ? fmt17(**o.ratio) : std::string("off")) << "\n";
    }
    os << "evaluate.day_buckets = " << buckets_text(cfg.day_buckets) << "\n";
    os << "evaluate.night_buckets = " << buckets_text(cfg.night_buckets) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------------------------
// Scene specs

namespace {

template <class T> using Field = std::pair<const char *, T synth::SceneSpec::*>;

const std::vector<Field<int>> &int_fields() {
    static const std::vector<Field<int>> f = {
        {"image_width", &synth::SceneSpec::image_width},
        {"image_height", &synth::SceneSpec::image_height},
        {"cars", &synth::SceneSpec::cars},
        {"database_stations", &synth::SceneSpec::database_stations},
        {"queries", &synth::SceneSpec::queries},
        {"anchors_per_image", &synth::SceneSpec::anchors_per_image},
        {"clutter_keypoints", &synth::SceneSpec::clutter_keypoints},
        {"global_dim", &synth::SceneSpec::global_dim},
    };
    return f;
}

const std::vector<Field<double>> &double_fields() {
    static const std::vector<Field<double>> f = {
        {"focal", &synth::SceneSpec::focal},
        {"street_length", &synth::SceneSpec::street_length},
        {"street_width", &synth::SceneSpec::street_width},
        {"sidewalk_width", &synth::SceneSpec::sidewalk_width},
        {"facade_height", &synth::SceneSpec::facade_height},
        {"patch_size", &synth::SceneSpec::patch_size},
        {"station_spacing", &synth::SceneSpec::station_spacing},
        {"camera_height", &synth::SceneSpec::camera_height},
        {"camera_yaw_deg", &synth::SceneSpec::camera_yaw_deg},
        {"camera_jitter_deg", &synth::SceneSpec::camera_jitter_deg},
        {"night_fraction", &synth::SceneSpec::night_fraction},
        {"query_offset_m", &synth::SceneSpec::query_offset_m},
        {"query_yaw_jitter_deg", &synth::SceneSpec::query_yaw_jitter_deg},
        {"query_pitch_jitter_deg", &synth::SceneSpec::query_pitch_jitter_deg},
        {"global_noise_day", &synth::SceneSpec::global_noise_day},
        {"global_noise_night", &synth::SceneSpec::global_noise_night},
        {"depth_outlier_fraction", &synth::SceneSpec::depth_outlier_fraction},
        {"depth_outlier_scale", &synth::SceneSpec::depth_outlier_scale},
        {"query_label_noise", &synth::SceneSpec::query_label_noise},
    };
    return f;
}

void reject_unknown(const json &j, std::initializer_list<const char *> known, const std::string &where) {
    for (const auto &[k, v] : j.items()) {
        (void)v;
        if (std::none_of(known.begin(), known.end(), [&](const char *n) { return k == n; }))
            throw std::invalid_argument(where + ": unknown key '" + k + "'");
    }
}

synth::Corruption parse_corruption(const json &j, const std::string &where) {
    if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
    reject_unknown(j, {"descriptor_sigma", "dropout", "pixel_sigma"}, where);
    synth::Corruption c;
    c.descriptor_sigma = j.value("descriptor_sigma", 0.0);
    c.dropout = j.value("dropout", 0.0);
    c.pixel_sigma = j.value("pixel_sigma", 0.0);
    return c;
}

json corruption_json(const synth::Corruption &c) {
    return {{"descriptor_sigma", c.descriptor_sigma}, {"dropout", c.dropout}, {"pixel_sigma", c.pixel_sigma}};
}

} // namespace

synth::SceneSpec parse_scene_spec(const std::string &text, const std::string &source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception &e) {
        throw std::invalid_argument(source + ": " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument(source + ": expected a JSON object");
    try {
        const std::string profile = j.value("profile", std::string("paper_like"));
        synth::SceneSpec spec;
        if (profile == "paper_like") spec = synth::paper_like_spec();
        else if (profile == "zero_noise") spec = synth::zero_noise_spec();
        else throw std::invalid_argument(source + ": unknown profile '" + profile + "'");
        for (const auto &[k, v] : j.items()) {
            if (k == "profile") continue;
            if (k == "seed") {
                spec.seed = v.get<std::uint64_t>();
                continue;
            }
            bool done = false;
            for (const auto &[name, member] : int_fields())
                if (k == name) {
                    spec.*member = v.get<int>();
                    done = true;
                }
            for (const auto &[name, member] : double_fields())
                if (k == name) {
                    spec.*member = v.get<double>();
                    done = true;
                }
            if (k == "families") {
                spec.families.clear();
                for (const auto &jf : v) {
                    const std::string where = source + ": family";
                    reject_unknown(jf, {"name", "dim", "mutual_nn", "ratio", "database", "day", "night"}, where);
                    synth::FamilySpec f;
                    f.family.name = jf.at("name").get<std::string>();
                    f.family.dim = jf.at("dim").get<int>();
                    f.family.use_mutual_nn = jf.value("mutual_nn", true);
                    if (jf.contains("ratio") && !jf["ratio"].is_null()) f.family.ratio = jf["ratio"].get<double>();
                    if (jf.contains("database")) f.database = parse_corruption(jf["database"], where + " database");
                    if (jf.contains("day")) f.day = parse_corruption(jf["day"], where + " day");
                    if (jf.contains("night")) f.night = parse_corruption(jf["night"], where + " night");
                    spec.families.push_back(f);
                }
                done = true;
            }
            if (!done) throw std::invalid_argument(source + ": unknown key '" + k + "'");
        }
        spec.validate();
        return spec;
    } catch (const json::exception &e) {
        throw std::invalid_argument(source + ": " + e.what());
    }
}

std::string render_scene_spec(const synth::SceneSpec &spec) {
    json j;
    j["seed"] = spec.seed;
    for (const auto &[name, member] : int_fields()) j[name] = spec.*member;
    for (const auto &[name, member] : double_fields()) j[name] = spec.*member;
    json fams = json::array();
    for (const auto &f : spec.families) {
        json jf{{"name", f.family.name}, {"dim", f.family.dim}, {"mutual_nn", f.family.use_mutual_nn}};
        jf["ratio"] = f.family.ratio ? json(*f.family.ratio) : json(nullptr);
        jf["database"] = corruption_json(f.database);
        jf["day"] = corruption_json(f.day);
        jf["night"] = corruption_json(f.night);
        fams.push_back(jf);
    }
    j["families"] = fams;
    return j.dump(2) + "\n";
}

} // namespace semloc::io
