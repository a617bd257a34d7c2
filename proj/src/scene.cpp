#include "v2p/scene.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace v2p::scene {
namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

float read_f32_le(const unsigned char* p) {
  std::uint32_t u = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                    (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  return std::bit_cast<float>(u);
}

void write_f32_le(std::uint8_t* p, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  p[0] = std::uint8_t(u & 0xff);
  p[1] = std::uint8_t((u >> 8) & 0xff);
  p[2] = std::uint8_t((u >> 16) & 0xff);
  p[3] = std::uint8_t((u >> 24) & 0xff);
}

double parse_double(const std::string& tok, const std::filesystem::path& path,
                    std::size_t line_no) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size()) {
    fail(path.string() + ":" + std::to_string(line_no) +
         ": not a number: '" + tok + "'");
  }
  return v;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

int class_index(const std::string& name,
                std::span<const std::string> class_names) {
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    if (class_names[i] == name) return int(i);
  }
  return -1;
}

std::string format_label_line(const geom::Box3D& b, const std::string& name,
                              const double* score) {
  std::ostringstream os;
  os << std::setprecision(17);
  // type truncated occluded alpha bbox(l t r b) h w l x y z yaw [score]
  os << name << " 0 0 0 0 0 0 0 " << b.height << ' ' << b.width << ' '
     << b.length << ' ' << b.center.x << ' ' << b.center.y << ' '
     << b.center.z << ' ' << b.yaw;
  if (score != nullptr) os << ' ' << *score;
  return os.str();
}

struct ParsedLine {
  geom::Box3D box;
  int class_id = -1;
  bool has_score = false;
  double score = 0;
};

// Returns nullopt for lines naming classes we do not track (KITTI's
// DontCare / Van / ... convention) and for blank lines.
std::optional<ParsedLine> parse_label_line(
    const std::string& line, const std::filesystem::path& path,
    std::size_t line_no, std::span<const std::string> class_names) {
  std::vector<std::string> f = split_ws(line);
  if (f.empty()) return std::nullopt;
  if (f.size() < 15 || f.size() > 16) {
    fail(path.string() + ":" + std::to_string(line_no) + ": expected 15 or 16 fields, got " +
         std::to_string(f.size()));
  }
  int cid = class_index(f[0], class_names);
  if (cid < 0) return std::nullopt;
  ParsedLine out;
  out.class_id = cid;
  out.box.height = parse_double(f[8], path, line_no);
  out.box.width = parse_double(f[9], path, line_no);
  out.box.length = parse_double(f[10], path, line_no);
  out.box.center = {parse_double(f[11], path, line_no),
                    parse_double(f[12], path, line_no),
                    parse_double(f[13], path, line_no)};
  out.box.yaw = parse_double(f[14], path, line_no);
  if (f.size() == 16) {
    out.has_score = true;
    out.score = parse_double(f[15], path, line_no);
  }
  if (!out.box.valid()) {
    fail(path.string() + ":" + std::to_string(line_no) + ": invalid box (sizes " +
         std::to_string(out.box.length) + " " + std::to_string(out.box.width) +
         " " + std::to_string(out.box.height) + ")");
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

bool SceneBounds::valid() const {
  auto ok = [](double lo, double hi) {
    return std::isfinite(lo) && std::isfinite(hi) && lo < hi;
  };
  return ok(x_min, x_max) && ok(y_min, y_max) && ok(z_min, z_max);
}

bool SceneBounds::contains(double x, double y, double z) const {
  return x >= x_min && x < x_max && y >= y_min && y < y_max && z >= z_min &&
         z < z_max;
}

PointCloud load_kitti_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  if (bytes.size() % 16 != 0) {
    fail(path.string() + ": truncated point record at byte offset " +
         std::to_string(bytes.size() / 16 * 16) + " (file size " +
         std::to_string(bytes.size()) + " is not a multiple of 16)");
  }
  PointCloud pc;
  pc.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const unsigned char* rec = bytes.data() + i * 16;
    pc.points[i] = {read_f32_le(rec), read_f32_le(rec + 4),
                    read_f32_le(rec + 8), read_f32_le(rec + 12)};
  }
  return pc;
}

void save_kitti_bin(const PointCloud& pc, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(pc.points.size() * 16);
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    std::uint8_t* rec = bytes.data() + i * 16;
    write_f32_le(rec, float(pc.points[i].x));
    write_f32_le(rec + 4, float(pc.points[i].y));
    write_f32_le(rec + 8, float(pc.points[i].z));
    write_f32_le(rec + 12, float(pc.points[i].r));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  if (!out) fail("short write to " + path.string());
}

GroundTruth load_kitti_labels(const std::filesystem::path& path,
                              std::span<const std::string> class_names) {
  GroundTruth gt;
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto parsed = parse_label_line(lines[i], path, i + 1, class_names);
    if (!parsed) continue;
    gt.boxes.push_back(parsed->box);
    gt.class_ids.push_back(parsed->class_id);
  }
  return gt;
}

void save_kitti_labels(const std::filesystem::path& path, const GroundTruth& gt,
                       std::span<const std::string> class_names) {
  if (gt.boxes.size() != gt.class_ids.size()) {
    fail("ground truth has " + std::to_string(gt.boxes.size()) + " boxes but " +
         std::to_string(gt.class_ids.size()) + " class ids");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
    int cid = gt.class_ids[i];
    if (cid < 0 || std::size_t(cid) >= class_names.size()) {
      fail("class id " + std::to_string(cid) + " out of range for " +
           std::to_string(class_names.size()) + " class names");
    }
    out << format_label_line(gt.boxes[i], class_names[std::size_t(cid)],
                             nullptr)
        << '\n';
  }
  if (!out) fail("short write to " + path.string());
}

std::vector<Detection> load_kitti_detections(
    const std::filesystem::path& path,
    std::span<const std::string> class_names) {
  std::vector<Detection> dets;
  std::vector<std::string> lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto parsed = parse_label_line(lines[i], path, i + 1, class_names);
    if (!parsed) continue;
    if (!parsed->has_score) {
      fail(path.string() + ":" + std::to_string(i + 1) +
           ": detection line is missing the score field");
    }
    dets.push_back({parsed->box, parsed->class_id, parsed->score});
  }
  return dets;
}

void save_kitti_detections(const std::filesystem::path& path,
                           std::span<const Detection> dets,
                           std::span<const std::string> class_names) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot open " + path.string() + " for writing");
  for (const Detection& d : dets) {
    if (d.class_id < 0 || std::size_t(d.class_id) >= class_names.size()) {
      fail("class id " + std::to_string(d.class_id) + " out of range for " +
           std::to_string(class_names.size()) + " class names");
    }
    out << format_label_line(d.box, class_names[std::size_t(d.class_id)],
                             &d.score)
        << '\n';
  }
  if (!out) fail("short write to " + path.string());
}

PointCloud crop_to_bounds(const PointCloud& pc, const SceneBounds& bounds) {
  if (!bounds.valid()) fail("invalid scene bounds");
  PointCloud out;
  out.points.reserve(pc.points.size());
  for (const Point& p : pc.points) {
    if (bounds.contains(p.x, p.y, p.z)) out.points.push_back(p);
  }
  return out;
}

}  // namespace v2p::scene
