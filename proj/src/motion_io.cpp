#include "mogen/motion_io.hpp"

#include "mogen/errors.hpp"

#include "json.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mogen {

namespace {

constexpr std::array<char, 5> kMagic{'M', 'S', 'E', 'Q', '1'};
constexpr std::size_t kHeaderBytes = kMagic.size() + 7 * 4;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f32(std::vector<unsigned char>& out, double v) {
  const auto f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }

  void need(std::uint64_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(FormatError::Kind::Truncated, bytes_.size(),
                        std::string("MSEQ1: truncated while reading ") + what);
    }
  }

 private:
  const std::vector<unsigned char>& bytes_;
  std::uint64_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

std::vector<unsigned char> encode_mseq(const LabeledDataset& data) {
  if (data.sequences.empty()) throw DataError("MSEQ1: refusing to encode an empty dataset");
  const auto& first = data.sequences.front();
  std::vector<unsigned char> out(kMagic.begin(), kMagic.end());
  put_u32(out, static_cast<std::uint32_t>(first.persons));
  put_u32(out, static_cast<std::uint32_t>(first.frames));
  put_u32(out, static_cast<std::uint32_t>(first.joints));
  put_u32(out, static_cast<std::uint32_t>(first.width()));
  put_u32(out, static_cast<std::uint32_t>(first.representation));
  put_u32(out, static_cast<std::uint32_t>(data.class_count));
  put_u32(out, static_cast<std::uint32_t>(data.sequences.size()));
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    const auto& s = data.sequences[i];
    if (s.persons != first.persons || s.frames != first.frames || s.joints != first.joints ||
        s.representation != first.representation) {
      throw DataError("MSEQ1: samples must share dimensions");
    }
    put_u32(out, static_cast<std::uint32_t>(data.labels[i]));
    for (double v : s.root) put_f32(out, v);
    for (double v : s.pose) put_f32(out, v);
  }
  return out;
}

LabeledDataset decode_mseq(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError(FormatError::Kind::MalformedHeader, 0, "MSEQ1: bad magic bytes");
  }
  const std::uint64_t pos = kMagic.size();
  if (bytes.size() < kHeaderBytes) {
    throw FormatError(FormatError::Kind::Truncated, bytes.size(), "MSEQ1: header is incomplete");
  }
  auto header_u32 = [&](std::uint64_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  const std::uint32_t persons = header_u32(pos), frames = header_u32(pos + 4), joints = header_u32(pos + 8);
  const std::uint32_t width = header_u32(pos + 12), rep_raw = header_u32(pos + 16);
  const std::uint32_t classes = header_u32(pos + 20), count = header_u32(pos + 24);
  if (rep_raw > 2) {
    throw FormatError(FormatError::Kind::MalformedHeader, pos + 16, "MSEQ1: unknown representation id");
  }
  const auto rep = static_cast<PoseRepresentation>(rep_raw);
  if (persons == 0 || frames == 0 || joints == 0 || classes == 0) {
    throw FormatError(FormatError::Kind::MalformedHeader, pos, "MSEQ1: zero dimension in header");
  }
  if (width != channels_per_node(rep)) {
    throw FormatError(FormatError::Kind::DimensionMismatch, pos + 12,
                      "MSEQ1: width " + std::to_string(width) + " does not match representation");
  }

  const std::uint64_t per_sample = 4 + 4ULL * persons * frames * 3 + 4ULL * persons * frames * joints * width;
  const std::uint64_t expected = kHeaderBytes + per_sample * count;
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Kind::Truncated, bytes.size(),
                      "MSEQ1: payload has " + std::to_string(bytes.size() - kHeaderBytes) + " bytes, header implies " +
                          std::to_string(expected - kHeaderBytes));
  }
  if (bytes.size() > expected) {
    throw FormatError(FormatError::Kind::DimensionMismatch, expected, "MSEQ1: trailing bytes after last sample");
  }

  LabeledDataset data;
  data.class_count = static_cast<int>(classes);
  data.topology = SkeletonTopology::for_joint_count(joints);
  data.sequences.reserve(count);
  std::vector<unsigned char> payload(bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes), bytes.end());
  Reader body(payload);
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::uint64_t at = kHeaderBytes + body.offset();
    const std::uint32_t label = body.u32("action id");
    if (label >= classes) {
      throw FormatError(FormatError::Kind::DimensionMismatch, at, "MSEQ1: action id exceeds class count");
    }
    MotionSequence s = MotionSequence::zeros(persons, frames, joints, rep);
    for (auto& v : s.root) v = body.f32("root translation");
    for (auto& v : s.pose) v = body.f32("pose");
    data.sequences.push_back(std::move(s));
    data.labels.push_back(static_cast<int>(label));
  }
  return data;
}

void save_dataset(const LabeledDataset& data, const std::filesystem::path& path) {
  write_file(path, encode_mseq(data));
}

LabeledDataset load_dataset(const std::filesystem::path& path) { return decode_mseq(read_file(path)); }

void save_sequence(const MotionSequence& seq, const std::filesystem::path& path) {
  LabeledDataset d;
  d.sequences = {seq};
  d.labels = {0};
  d.class_count = 1;
  save_dataset(d, path);
}

MotionSequence load_sequence(const std::filesystem::path& path) {
  auto d = load_dataset(path);
  if (d.sequences.size() != 1) throw DataError(path.string() + " holds more than one sequence");
  return d.sequences.front();
}

std::string dataset_to_json(const LabeledDataset& data) {
  using nlohmann::json;
  if (data.sequences.empty()) throw DataError("cannot export an empty dataset");
  const auto& f = data.sequences.front();
  json doc;
  doc["format"] = "MSEQ1";
  doc["persons"] = f.persons;
  doc["frames"] = f.frames;
  doc["joints"] = f.joints;
  doc["width"] = f.width();
  doc["representation"] = std::string(representation_name(f.representation));
  doc["class_count"] = data.class_count;
  doc["sample_count"] = data.sequences.size();
  if (!data.class_names.empty()) doc["class_names"] = data.class_names;
  json samples = json::array();
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    const auto& s = data.sequences[i];
    json root = json::array(), pose = json::array();
    for (std::int64_t p = 0; p < s.persons; ++p) {
      json rp = json::array(), pp = json::array();
      for (std::int64_t t = 0; t < s.frames; ++t) {
        rp.push_back({static_cast<float>(s.root_at(p, t, 0)), static_cast<float>(s.root_at(p, t, 1)),
                      static_cast<float>(s.root_at(p, t, 2))});
        json frame = json::array();
        for (std::int64_t j = 0; j < s.joints; ++j) {
          json node = json::array();
          for (std::int64_t d = 0; d < s.width(); ++d) node.push_back(static_cast<float>(s.pose_at(p, t, j, d)));
          frame.push_back(std::move(node));
        }
        pp.push_back(std::move(frame));
      }
      root.push_back(std::move(rp));
      pose.push_back(std::move(pp));
    }
    samples.push_back({{"action_id", data.labels[i]}, {"root_translation", root}, {"local_pose", pose}});
  }
  doc["samples"] = std::move(samples);
  return doc.dump();
}

LabeledDataset dataset_from_json(const std::string& text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("motion JSON: ") + e.what());
  }
  try {
    const std::int64_t persons = doc.at("persons"), frames = doc.at("frames"), joints = doc.at("joints");
    const auto rep = parse_representation(doc.at("representation").get<std::string>());
    LabeledDataset data;
    data.class_count = doc.at("class_count");
    data.topology = SkeletonTopology::for_joint_count(joints);
    if (doc.contains("class_names")) data.class_names = doc["class_names"].get<std::vector<std::string>>();
    for (const auto& sample : doc.at("samples")) {
      MotionSequence s = MotionSequence::zeros(persons, frames, joints, rep);
      for (std::int64_t p = 0; p < persons; ++p) {
        for (std::int64_t t = 0; t < frames; ++t) {
          for (int k = 0; k < 3; ++k) s.root_at(p, t, k) = sample.at("root_translation").at(p).at(t).at(k).get<float>();
          for (std::int64_t j = 0; j < joints; ++j) {
            for (std::int64_t d = 0; d < s.width(); ++d) {
              s.pose_at(p, t, j, d) = sample.at("local_pose").at(p).at(t).at(j).at(d).get<float>();
            }
          }
        }
      }
      data.sequences.push_back(std::move(s));
      data.labels.push_back(sample.at("action_id").get<int>());
    }
    return data;
  } catch (const json::exception& e) {
    throw DataError(std::string("motion JSON: ") + e.what());
  }
}

}  // namespace mogen
