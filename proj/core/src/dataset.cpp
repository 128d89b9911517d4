#include "anprompt/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "anprompt/errors.hpp"
#include "anprompt/optim.hpp"
#include "anprompt/rng.hpp"

namespace anprompt {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kNamePool{
    "antelope", "badger", "camel",  "dolphin", "eagle", "falcon",  "gecko",  "heron",
    "ibis",     "jaguar", "koala",  "lemur",   "marten", "newt",   "otter",  "panda",
    "quail",    "raven",  "salmon", "tapir",   "urchin", "vulture", "walrus", "yak"};

const std::vector<std::string> kColors{"brown", "grey",  "golden", "spotted", "striped", "black",
                                       "white", "red",   "orange", "silver",  "green",   "tawny"};
const std::vector<std::string> kHabitats{"forest", "river", "desert", "savanna", "mountains", "marsh",
                                         "reef",   "jungle", "tundra", "grassland", "canyon", "lagoon"};
const std::vector<std::string> kFeatures{"long horns",  "sharp claws", "a bushy tail", "webbed feet",
                                         "a curved beak", "large ears", "bright eyes",  "thick fur",
                                         "short legs",  "a long neck", "pointed teeth", "broad wings"};

const std::vector<std::string> kTemplates{
    "a {color} {name} in the {habitat}",
    "a {name} with {feature}",
    "a small {color} {name} near the {habitat}",
    "a photo of a {name} resting in the {habitat}",
    "a close view of a {name} showing {feature}",
    "a {color} animal called a {name}",
    "a {name} seen in its natural {habitat}",
    "a large {name} with {feature} and {color} markings",
    "the {name} walks across the {habitat}",
    "a young {name} with {color} coloring"};

const RawCaptions kSynonyms{
    {"photo", {"picture", "image"}},   {"small", {"little", "tiny"}},    {"large", {"big", "huge"}},
    {"forest", {"woods"}},             {"river", {"stream"}},            {"young", {"juvenile"}},
    {"animal", {"creature"}},          {"close", {"near"}},              {"walks", {"strolls", "moves"}},
    {"seen", {"spotted", "observed"}}, {"resting", {"sleeping"}},        {"markings", {"patterns"}},
    {"grey", {"gray"}},                {"natural", {"native"}},          {"showing", {"displaying"}},
    {"coloring", {"colors"}},          {"sharp", {"keen"}},              {"bright", {"vivid"}}};

std::string fill(std::string tmpl, const std::map<std::string, std::string>& slots) {
  for (const auto& [key, val] : slots) {
    const std::string tag = "{" + key + "}";
    for (size_t pos = tmpl.find(tag); pos != std::string::npos; pos = tmpl.find(tag, pos + val.size())) {
      tmpl.replace(pos, tag.size(), val);
    }
  }
  return tmpl;
}

template <class T>
const T& pick(const std::vector<T>& pool, std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
  return pool[d(rng)];
}

// Jointly optimises the class prototypes (as patch matrices) so each maps
// near its class text target through the frozen, prompt-free image tower.
void align_prototypes(std::vector<Parameter>& protos, const Mat& targets, const Backbone& backbone, int steps,
                      double lr) {
  std::vector<Parameter*> ps;
  for (auto& p : protos) ps.push_back(&p);
  Adam opt(ps);
  const int n = static_cast<int>(protos.size());
  std::vector<int> labels(static_cast<size_t>(n));
  for (int c = 0; c < n; ++c) labels[static_cast<size_t>(c)] = c;
  for (int s = 0; s < steps; ++s) {
    opt.zero_grad();
    ag::Tape tape;
    std::vector<ag::Var> feats;
    for (auto& p : protos) feats.push_back(backbone.vision.encode_plain(tape, tape.param(p)));
    ag::Var f = ag::concat_rows(feats);
    ag::Var logits = ag::matmul_nt(f, tape.constant(targets));
    // Contrastive term separates classes; the cosine term pulls each
    // prototype onto its own target.
    ag::Var ce = ag::scale(ag::sum(ag::pick(ag::log_softmax_rows(ag::scale(logits, 1.0 / 0.05)), labels)),
                           -1.0 / n);
    ag::Var pull = ag::scale(ag::sum(ag::pick(logits, labels)), -1.0 / n);
    tape.backward(ag::add(ce, pull));
    opt.step(lr);
  }
}

}  // namespace

void DatasetBundle::validate() const {
  const int n = static_cast<int>(class_names.size());
  if (n < 2) throw InputError("dataset needs at least two classes");
  if (train_images.size() != train_labels.size() || test_images.size() != test_labels.size()) {
    throw InputError("image and label counts differ");
  }
  for (int y : train_labels) {
    if (y < 0 || y >= n) throw InputError("train label " + std::to_string(y) + " out of range");
  }
  for (int y : test_labels) {
    if (y < 0 || y >= n) throw InputError("test label " + std::to_string(y) + " out of range");
  }
  for (const auto& name : class_names) {
    if (!captions.count(name)) throw CacheError("no captions for class '" + name + "'");
  }
}

std::string class_prompt_text(const std::string& class_name) { return "a photo of a " + class_name; }

Vocabulary build_vocabulary(const DatasetBundle& data) {
  std::vector<std::string> texts;
  for (const auto& name : data.class_names) texts.push_back(class_prompt_text(name));
  for (const auto& [name, list] : data.captions) texts.insert(texts.end(), list.begin(), list.end());
  for (const auto& [word, list] : data.synonyms) {
    texts.push_back(word);
    texts.insert(texts.end(), list.begin(), list.end());
  }
  return Vocabulary::build(texts);
}

DatasetBundle generate_synthetic(const SyntheticSpec& spec, int image_size, int channels, std::uint64_t seed,
                                 const Backbone* backbone, int patch_rows, int patch_cols) {
  if (spec.num_classes < 2) throw ConfigError("field 'dataset.synthetic.num_classes' must be at least 2");
  if (spec.num_classes > static_cast<int>(kNamePool.size())) {
    throw ConfigError("field 'dataset.synthetic.num_classes' exceeds the " + std::to_string(kNamePool.size()) +
                      " built-in class names");
  }
  if (spec.captions_per_class < 2) {
    throw CacheError("synthetic spec asks for " + std::to_string(spec.captions_per_class) +
                     " captions per class; at least 2 are needed");
  }
  if (spec.captions_per_class > static_cast<int>(kTemplates.size())) {
    throw ConfigError("field 'dataset.synthetic.captions_per_class' exceeds the " +
                      std::to_string(kTemplates.size()) + " caption templates");
  }

  DatasetBundle out;
  out.synthetic_spec = spec;
  out.synonyms = kSynonyms;
  out.class_names.assign(kNamePool.begin(), kNamePool.begin() + spec.num_classes);

  // Captions: each class gets its own colour, habitat and feature words.
  for (int c = 0; c < spec.num_classes; ++c) {
    auto rng = derive_rng(seed, {1, static_cast<std::uint64_t>(c)});
    const std::map<std::string, std::string> slots{{"name", out.class_names[static_cast<size_t>(c)]},
                                                   {"color", pick(kColors, rng)},
                                                   {"habitat", pick(kHabitats, rng)},
                                                   {"feature", pick(kFeatures, rng)}};
    std::vector<size_t> order(kTemplates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    auto& list = out.captions[out.class_names[static_cast<size_t>(c)]];
    for (int i = 0; i < spec.captions_per_class; ++i) list.push_back(fill(kTemplates[order[static_cast<size_t>(i)]], slots));
  }

  // Prototypes live in patch space when a backbone is available so they can
  // be optimised through it; otherwise directly in pixel space.
  const int pr = backbone ? backbone->config.patch_rows : patch_rows;
  const int pc = backbone ? backbone->config.patch_cols : patch_cols;
  if (image_size % pr != 0 || image_size % pc != 0) throw ConfigError("image_size must be a multiple of the patch grid");
  const int m = pr * pc;
  const int pdim = (image_size / pr) * (image_size / pc) * channels;
  std::vector<Parameter> protos;
  for (int c = 0; c < spec.num_classes; ++c) {
    auto rng = derive_rng(seed, {2, static_cast<std::uint64_t>(c)});
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat p(m, pdim);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = nd(rng);
    protos.emplace_back("proto." + std::to_string(c), std::move(p), true);
  }

  if (backbone && spec.align_steps > 0) {
    if (backbone->config.image_size != image_size || backbone->config.channels != channels) {
      throw DimensionError("backbone image geometry differs from the synthetic spec");
    }
    const Vocabulary vocab = build_vocabulary(out);
    FrozenTextEncoder frozen(backbone->text);
    Mat targets(spec.num_classes, backbone->config.embed_dim);
    for (int c = 0; c < spec.num_classes; ++c) {
      const auto& name = out.class_names[static_cast<size_t>(c)];
      RowVec t = frozen.encode(vocab.encode(class_prompt_text(name)));
      for (const auto& s : out.captions.at(name)) t += frozen.encode(vocab.encode(s));
      targets.row(c) = t.normalized();
    }
    align_prototypes(protos, targets, *backbone, spec.align_steps, spec.align_lr);
  }

  auto to_image = [&](const Mat& patches) {
    Image img;
    img.height = img.width = image_size;
    img.channels = channels;
    img.pixels.resize(static_cast<size_t>(image_size * image_size * channels));
    const int ph = image_size / pr;
    const int pw = image_size / pc;
    for (int gr = 0; gr < pr; ++gr) {
      for (int gc = 0; gc < pc; ++gc) {
        int k = 0;
        for (int y = 0; y < ph; ++y) {
          for (int x = 0; x < pw; ++x) {
            for (int ch = 0; ch < channels; ++ch) {
              img.pixels[static_cast<size_t>(((gr * ph + y) * image_size + gc * pw + x) * channels + ch)] =
                  patches(gr * pc + gc, k++);
            }
          }
        }
      }
    }
    return img;
  };

  for (int c = 0; c < spec.num_classes; ++c) {
    const Image proto = to_image(protos[static_cast<size_t>(c)].value);
    auto rng = derive_rng(seed, {3, static_cast<std::uint64_t>(c)});
    std::normal_distribution<double> noise(0.0, spec.pixel_noise);
    auto sample = [&]() {
      Image img = proto;
      for (double& v : img.pixels) v += noise(rng);
      return img;
    };
    for (int i = 0; i < spec.train_per_class; ++i) {
      out.train_images.push_back(sample());
      out.train_labels.push_back(c);
    }
    for (int i = 0; i < spec.test_per_class; ++i) {
      out.test_images.push_back(sample());
      out.test_labels.push_back(c);
    }
  }
  return out;
}

DatasetBundle generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const Backbone& backbone) {
  return generate_synthetic(spec, backbone.config.image_size, backbone.config.channels, seed, &backbone);
}

ResolvedSplit resolve_split(const std::vector<std::string>& class_names, const SplitSpec& split) {
  ResolvedSplit out;
  const int n = static_cast<int>(class_names.size());
  if (split.base_classes.empty() && split.novel_classes.empty()) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return class_names[static_cast<size_t>(a)] < class_names[static_cast<size_t>(b)];
    });
    const int nb = (n + 1) / 2;
    out.base.assign(order.begin(), order.begin() + nb);
    out.novel.assign(order.begin() + nb, order.end());
  } else {
    auto lookup = [&](const std::string& name, const char* field) {
      auto it = std::find(class_names.begin(), class_names.end(), name);
      if (it == class_names.end()) {
        throw ConfigError(std::string("field '") + field + "' names unknown class '" + name + "'");
      }
      return static_cast<int>(it - class_names.begin());
    };
    for (const auto& s : split.base_classes) out.base.push_back(lookup(s, "dataset.split.base_classes"));
    for (const auto& s : split.novel_classes) out.novel.push_back(lookup(s, "dataset.split.novel_classes"));
  }
  std::sort(out.base.begin(), out.base.end());
  std::sort(out.novel.begin(), out.novel.end());
  std::set<int> all(out.base.begin(), out.base.end());
  for (int c : out.novel) {
    if (!all.insert(c).second) throw ConfigError("field 'dataset.split' puts a class in both base and novel");
  }
  if (static_cast<int>(all.size()) != n) throw ConfigError("field 'dataset.split' does not cover every class");
  if (out.base.empty() || out.novel.empty()) throw ConfigError("field 'dataset.split' needs base and novel classes");
  return out;
}

std::vector<size_t> select_images(const std::vector<int>& labels, const std::vector<int>& classes, int per_class) {
  std::map<int, int> taken;
  for (int c : classes) taken[c] = 0;
  std::vector<size_t> out;
  for (size_t i = 0; i < labels.size(); ++i) {
    auto it = taken.find(labels[i]);
    if (it == taken.end()) continue;
    if (per_class >= 0 && it->second >= per_class) continue;
    ++it->second;
    out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image files

void write_pfm(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw InputError("PFM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  out << (image.channels == 3 ? "PF" : "Pf") << "\n" << image.width << " " << image.height << "\n-1.0\n";
  // PFM stores rows bottom to top.
  for (int y = image.height - 1; y >= 0; --y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const float v = static_cast<float>(image.at(y, x, c));
        char bytes[4];
        std::memcpy(bytes, &v, 4);
        out.write(bytes, 4);
      }
    }
  }
}

namespace {

std::string next_token(std::istream& in, const fs::path& path) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw ParseError("truncated header in " + path.string());
}

int header_int(std::istream& in, const fs::path& path) {
  const std::string t = next_token(in, path);
  try {
    size_t used = 0;
    const int v = std::stoi(t, &used);
    if (used != t.size() || v <= 0) throw ParseError("");
    return v;
  } catch (const std::exception&) {
    throw ParseError("bad header value '" + t + "' in " + path.string());
  }
}

}  // namespace

Image read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  const std::string magic = next_token(in, path);
  if (magic != "PF" && magic != "Pf") throw ParseError(path.string() + " is not a PFM file");
  Image img;
  img.channels = magic == "PF" ? 3 : 1;
  img.width = header_int(in, path);
  img.height = header_int(in, path);
  const std::string scale_tok = next_token(in, path);
  double scale = 0.0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw ParseError("bad scale in " + path.string());
  }
  if (scale > 0) throw ParseError("big-endian PFM is not supported: " + path.string());
  in.get();
  img.pixels.resize(static_cast<size_t>(img.width * img.height * img.channels));
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        char bytes[4];
        if (!in.read(bytes, 4)) throw ParseError("truncated pixel data in " + path.string());
        float v = 0.0F;
        std::memcpy(&v, bytes, 4);
        img.pixels[static_cast<size_t>((y * img.width + x) * img.channels + c)] = v;
      }
    }
  }
  return img;
}

void write_ppm(const fs::path& path, const Image& image) {
  if (image.channels != 3) throw InputError("PPM needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.pixels.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0 + 0.5);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  if (next_token(in, path) != "P6") throw ParseError(path.string() + " is not a binary PPM");
  Image img;
  img.channels = 3;
  img.width = header_int(in, path);
  img.height = header_int(in, path);
  const int maxval = header_int(in, path);
  if (maxval > 255) throw ParseError("16-bit PPM is not supported: " + path.string());
  in.get();
  std::vector<unsigned char> bytes(static_cast<size_t>(img.width * img.height * 3));
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw ParseError("truncated pixel data in " + path.string());
  }
  img.pixels.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / static_cast<double>(maxval);
  return img;
}

Image read_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pfm") return read_pfm(path);
  if (ext == ".ppm") return read_ppm(path);
  throw FileError("unsupported image type: " + path.string());
}

// ---------------------------------------------------------------------------
// Folder datasets

void save_dataset(const fs::path& dir, const DatasetBundle& data) {
  data.validate();
  fs::create_directories(dir);
  auto dump = [&](const char* split, const std::vector<Image>& images, const std::vector<int>& labels) {
    std::map<int, int> counter;
    for (size_t i = 0; i < images.size(); ++i) {
      const auto& name = data.class_names[static_cast<size_t>(labels[i])];
      const fs::path sub = dir / split / name;
      fs::create_directories(sub);
      char file[32];
      std::snprintf(file, sizeof(file), "%04d.pfm", counter[labels[i]]++);
      write_pfm(sub / file, images[i]);
    }
  };
  dump("train", data.train_images, data.train_labels);
  dump("test", data.test_images, data.test_labels);
  save_caption_file(dir / "captions.json", data.captions);
  if (!data.synonyms.empty()) save_caption_file(dir / "synonyms.json", data.synonyms);
}

DatasetBundle load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir / "train")) throw FileError("dataset " + dir.string() + " has no train/ directory");
  DatasetBundle out;
  for (const auto& e : fs::directory_iterator(dir / "train")) {
    if (e.is_directory()) out.class_names.push_back(e.path().filename().string());
  }
  std::sort(out.class_names.begin(), out.class_names.end());
  auto ingest = [&](const char* split, std::vector<Image>& images, std::vector<int>& labels) {
    for (size_t c = 0; c < out.class_names.size(); ++c) {
      const fs::path sub = dir / split / out.class_names[c];
      if (!fs::is_directory(sub)) continue;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(sub)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".pfm" || ext == ".ppm")) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        images.push_back(read_image(f));
        labels.push_back(static_cast<int>(c));
      }
    }
  };
  ingest("train", out.train_images, out.train_labels);
  ingest("test", out.test_images, out.test_labels);
  out.captions = load_caption_file(dir / "captions.json");
  if (fs::exists(dir / "synonyms.json")) out.synonyms = load_caption_file(dir / "synonyms.json");
  out.validate();
  return out;
}

}  // namespace anprompt
