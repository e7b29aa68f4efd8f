#include "cine/sequence_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "cine/hash.hpp"
#include "cine/random.hpp"

namespace cine {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'I', 'N', 'E', 'S', 'E', 'Q', '\0'};

json mask_json(const SamplingMask& m) {
  return {{"acceleration", m.acceleration}, {"center_lines", m.center_lines}, {"seed", m.seed}};
}

void read_mask_meta(const json& j, SamplingMask& m) {
  m.acceleration = j.at("acceleration").get<double>();
  m.center_lines = j.at("center_lines").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated sequence file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 | static_cast<std::uint32_t>(b[2]) << 16 |
         static_cast<std::uint32_t>(b[3]) << 24;
}

void read_exact(std::istream& is, void* dst, std::size_t n, const fs::path& path) {
  if (!is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n)))
    throw std::runtime_error(path.string() + ": truncated sequence file");
}

}  // namespace

std::string SequenceRecord::id() const { return sequence.subject_id + "_s" + std::to_string(sequence.slice_index); }

SequenceRecord remask(SequenceRecord record, const MaskSpec& spec) {
  const int H = record.sequence.height();
  const int center = spec.center_lines > 0 ? spec.center_lines : default_center_lines(H, spec.acceleration);
  const std::uint64_t base = mix_seed(spec.mask_seed, fnv1a(record.id()));
  record.mask = make_vd_mask(H, spec.acceleration, center, base);
  record.frame_masks.clear();
  if (spec.per_frame)
    for (int t = 0; t < record.sequence.num_frames(); ++t)
      record.frame_masks.push_back(make_vd_mask(H, spec.acceleration, center, mix_seed(base, static_cast<std::uint64_t>(t) + 1)));
  record.noise = NoiseSpec{spec.noise_sigma, mix_seed(base, 0xA11CE)};
  return record;
}

SequenceRecord make_record(ComplexCineSequence sequence, Split split, std::uint64_t phase_seed, const MaskSpec& spec) {
  SequenceRecord r;
  r.sequence = std::move(sequence);
  r.split = split;
  r.phase_seed = phase_seed;
  return remask(std::move(r), spec);
}

void write_sequence(const fs::path& path, const SequenceRecord& record) {
  const auto& seq = record.sequence;
  seq.validate();
  json header = {
      {"subject_id", seq.subject_id},
      {"slice_index", seq.slice_index},
      {"frames", seq.num_frames()},
      {"height", seq.height()},
      {"width", seq.width()},
      {"mask", mask_json(record.mask)},
      {"per_frame_masks", !record.frame_masks.empty()},
      {"phase_seed", record.phase_seed},
      {"noise_sigma", record.noise.sigma},
      {"noise_seed", record.noise.seed},
      {"split", to_string(record.split)},
  };
  if (seq.spacing) header["spacing"] = {seq.spacing->row_mm, seq.spacing->col_mm, seq.spacing->slice_mm};
  if (!record.frame_masks.empty()) {
    json fm = json::array();
    for (const auto& m : record.frame_masks) fm.push_back(mask_json(m));
    header["frame_masks"] = fm;
  }
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_u32(os, kSequenceFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& f : seq.frames) {
    ComplexImage row_major = f.transpose();  // column-major storage of the transpose = row-major of f
    os.write(reinterpret_cast<const char*>(row_major.data()), static_cast<std::streamsize>(row_major.size() * sizeof(Complex)));
  }
  os.write(reinterpret_cast<const char*>(record.mask.lines.data()), static_cast<std::streamsize>(record.mask.lines.size()));
  for (const auto& m : record.frame_masks)
    os.write(reinterpret_cast<const char*>(m.lines.data()), static_cast<std::streamsize>(m.lines.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

SequenceRecord read_sequence(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  read_exact(is, magic, sizeof(magic), path);
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error(path.string() + ": not a sequence file");
  const auto version = get_u32(is);
  if (version != kSequenceFormatVersion)
    throw std::runtime_error(path.string() + ": unsupported format version " + std::to_string(version));
  const auto len = get_u32(is);
  std::string text(len, '\0');
  read_exact(is, text.data(), len, path);

  SequenceRecord rec;
  json header;
  try {
    header = json::parse(text);
    rec.sequence.subject_id = header.at("subject_id").get<std::string>();
    rec.sequence.slice_index = header.at("slice_index").get<int>();
    read_mask_meta(header.at("mask"), rec.mask);
    rec.phase_seed = header.at("phase_seed").get<std::uint64_t>();
    rec.noise.sigma = header.at("noise_sigma").get<double>();
    rec.noise.seed = header.at("noise_seed").get<std::uint64_t>();
    rec.split = split_from_string(header.at("split").get<std::string>());
    if (header.contains("spacing")) {
      const auto& s = header["spacing"];
      rec.sequence.spacing = PixelSpacing{s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": bad header: " + e.what());
  }
  const int t = header.at("frames").get<int>();
  const int h = header.at("height").get<int>();
  const int w = header.at("width").get<int>();
  if (t < 1 || h < 1 || w < 1) throw std::runtime_error(path.string() + ": bad dimensions");
  for (int i = 0; i < t; ++i) {
    ComplexImage row_major(w, h);
    read_exact(is, row_major.data(), static_cast<std::size_t>(row_major.size()) * sizeof(Complex), path);
    rec.sequence.frames.push_back(row_major.transpose());
  }
  rec.mask.lines.resize(static_cast<std::size_t>(h));
  read_exact(is, rec.mask.lines.data(), rec.mask.lines.size(), path);
  if (header.value("per_frame_masks", false)) {
    for (const auto& meta : header.at("frame_masks")) {
      SamplingMask m;
      read_mask_meta(meta, m);
      m.lines.resize(static_cast<std::size_t>(h));
      read_exact(is, m.lines.data(), m.lines.size(), path);
      rec.frame_masks.push_back(std::move(m));
    }
  }
  if (is.peek() != std::ifstream::traits_type::eof()) throw std::runtime_error(path.string() + ": trailing bytes");
  return rec;
}

const std::vector<std::string>& Manifest::files(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  json j = {{"format_version", kSequenceFormatVersion},
            {"acceleration", m.acceleration},
            {"split_seed", m.split_seed},
            {"mask_seed", m.mask_seed},
            {"train", m.train},
            {"val", m.val},
            {"test", m.test}};
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  Manifest m;
  try {
    const json j = json::parse(is);
    m.acceleration = j.at("acceleration").get<double>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.mask_seed = j.at("mask_seed").get<std::uint64_t>();
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": bad manifest: " + e.what());
  }
  return m;
}

std::vector<SequenceRecord> load_split(const fs::path& manifest_path, Split split) {
  const Manifest m = read_manifest(manifest_path);
  std::vector<SequenceRecord> out;
  for (const auto& f : m.files(split)) out.push_back(read_sequence(manifest_path.parent_path() / f));
  return out;
}

}  // namespace cine
