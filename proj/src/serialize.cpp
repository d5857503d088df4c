#include "detrame/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace detrame::serialize {

namespace {

constexpr const char* kMagicLine = "detrame-model v1";

void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little) {
    throw std::runtime_error("model container requires a little-endian host");
  }
}

std::string act_token(const net::Activation& act) {
  if (std::holds_alternative<net::PlainReLU>(act)) return "relu";
  const auto& qa = std::get<net::QMetricAct>(act);
  return "qmetric " + std::to_string(qa.cell.tt_max);
}

}  // namespace

void save_model(const std::string& path, net::Model& model, const data::Standardizer* norm) {
  require_little_endian();
  net::check_model(model);

  std::ostringstream header;
  header << kMagicLine << "\n";
  header << "class_count " << model.class_count << "\n";
  if (model.input_shape.size() == 1) {
    header << "input vec " << model.input_shape[0] << "\n";
  } else {
    header << "input img " << model.input_shape[0] << " " << model.input_shape[1] << " "
           << model.input_shape[2] << "\n";
  }
  for (const auto& layer : model.layers) {
    header << "layer ";
    if (const auto* dense = std::get_if<net::Dense>(&layer.linear)) {
      header << "dense " << dense->W.rows() << " " << act_token(layer.act);
    } else {
      const auto& conv = std::get<net::Conv2D>(layer.linear);
      header << "conv " << conv.out_ch << " " << conv.kh << " " << conv.kw << " " << conv.stride
             << " " << conv.padding << " " << act_token(layer.act);
    }
    if (layer.reshape) {
      header << " reshape " << layer.reshape->out_shape.size();
      for (Index d : layer.reshape->out_shape) header << " " << d;
    }
    header << "\n";
  }

  auto views = net::param_views(model);
  struct NamedArray {
    std::string name;
    std::vector<Index> shape;
    const double* data;
    Index size;
  };
  std::vector<NamedArray> arrays;
  for (const auto& v : views) arrays.push_back({v.name, v.shape, v.data, v.size});
  if (norm) {
    arrays.push_back({"norm.mean", {norm->mean.size()}, norm->mean.data(), norm->mean.size()});
    arrays.push_back(
        {"norm.std", {norm->stddev.size()}, norm->stddev.data(), norm->stddev.size()});
  }

  std::size_t offset = 0;
  for (const auto& a : arrays) {
    header << "tensor " << a.name << " " << a.shape.size();
    for (Index d : a.shape) header << " " << d;
    header << " " << offset << "\n";
    offset += static_cast<std::size_t>(a.size) * sizeof(double);
  }
  header << "payload " << offset << "\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  const std::string htext = header.str();
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& a : arrays) {
    out.write(reinterpret_cast<const char*>(a.data),
              static_cast<std::streamsize>(a.size * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

ModelBundle load_model(const std::string& path) {
  require_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);

  std::string line;
  if (!std::getline(in, line) || line != kMagicLine) {
    throw std::runtime_error("load_model: not a detrame model container");
  }

  net::Model model;
  struct TensorEntry {
    std::string name;
    std::vector<Index> shape;
    std::size_t offset;
  };
  std::vector<TensorEntry> tensors;
  std::size_t payload_bytes = 0;
  std::vector<Index> flow;  // per-sample shape while rebuilding layers

  bool saw_payload = false;
  while (!saw_payload && std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "class_count") {
      ls >> model.class_count;
    } else if (tok == "input") {
      std::string kind;
      ls >> kind;
      if (kind == "vec") {
        Index k;
        ls >> k;
        model.input_shape = {k};
      } else if (kind == "img") {
        Index c, h, w;
        ls >> c >> h >> w;
        model.input_shape = {c, h, w};
      } else {
        throw std::runtime_error("load_model: unknown input kind " + kind);
      }
      flow = model.input_shape;
    } else if (tok == "layer") {
      std::string kind;
      ls >> kind;
      net::LinearOp lin;
      Index act_dim = 0;
      if (kind == "dense") {
        Index out;
        ls >> out;
        if (flow.size() != 1) throw std::runtime_error("load_model: dense after non-vector");
        lin = net::Dense{Matrix::Zero(out, flow[0]), Vector::Zero(out)};
        flow = {out};
        act_dim = out;
      } else if (kind == "conv") {
        net::Conv2D conv;
        ls >> conv.out_ch >> conv.kh >> conv.kw >> conv.stride >> conv.padding;
        if (flow.size() != 3) throw std::runtime_error("load_model: conv after non-image");
        conv.in_ch = flow[0];
        conv.kernel = Vector::Zero(conv.out_ch * conv.in_ch * conv.kh * conv.kw);
        conv.bias = Vector::Zero(conv.out_ch);
        auto [ho, wo] = net::conv2d_output_hw(conv, flow[1], flow[2]);
        flow = {conv.out_ch, ho, wo};
        act_dim = conv.out_ch;
        lin = std::move(conv);
      } else {
        throw std::runtime_error("load_model: unknown layer kind " + kind);
      }
      std::string act;
      ls >> act;
      net::Activation activation = net::PlainReLU{};
      if (act == "relu") {
        activation = net::PlainReLU{};
      } else if (act == "qmetric") {
        int tt;
        ls >> tt;
        activation = net::QMetricAct{net::default_cell(act_dim, tt)};
      } else {
        throw std::runtime_error("load_model: unknown activation " + act);
      }
      std::optional<net::Reshape> reshape;
      std::string extra;
      if (ls >> extra) {
        if (extra != "reshape") throw std::runtime_error("load_model: unexpected token " + extra);
        std::size_t rank;
        ls >> rank;
        std::vector<Index> out_shape(rank);
        for (auto& d : out_shape) ls >> d;
        if (!ls) throw std::runtime_error("load_model: malformed reshape suffix");
        reshape = net::Reshape{flow, out_shape};
        flow = out_shape;
      } else {
        ls.clear();  // the reshape suffix is optional
      }
      model.layers.push_back(net::Layer{std::move(lin), std::move(activation), std::move(reshape)});
    } else if (tok == "tensor") {
      TensorEntry e;
      std::size_t rank;
      ls >> e.name >> rank;
      e.shape.resize(rank);
      for (auto& d : e.shape) ls >> d;
      ls >> e.offset;
      tensors.push_back(std::move(e));
    } else if (tok == "payload") {
      ls >> payload_bytes;
      if (!ls) throw std::runtime_error("load_model: malformed payload line");
      saw_payload = true;
    } else {
      throw std::runtime_error("load_model: unknown header line: " + line);
    }
    if (ls.fail()) {
      throw std::runtime_error("load_model: malformed header line: " + line);
    }
  }
  if (!saw_payload) throw std::runtime_error("load_model: missing payload marker");
  if (flow.size() != 1) throw std::runtime_error("load_model: head input is not a vector");
  model.head = AffineTransform(Matrix::Zero(model.class_count, flow[0]),
                               Vector::Zero(model.class_count));

  std::vector<char> payload(payload_bytes);
  in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (in.gcount() != static_cast<std::streamsize>(payload_bytes)) {
    throw std::runtime_error("load_model: truncated payload");
  }

  ModelBundle bundle;
  auto views = net::param_views(model);
  auto fill = [&](const TensorEntry& e, double* dst, Index size) {
    Index total = 1;
    for (Index d : e.shape) total *= d;
    if (total != size) throw std::runtime_error("load_model: shape mismatch for " + e.name);
    const std::size_t bytes = static_cast<std::size_t>(size) * sizeof(double);
    if (e.offset + bytes > payload_bytes) {
      throw std::runtime_error("load_model: tensor " + e.name + " exceeds payload");
    }
    std::memcpy(dst, payload.data() + e.offset, bytes);
  };

  Vector norm_mean, norm_std;
  std::size_t filled = 0;
  for (const auto& e : tensors) {
    if (e.name == "norm.mean") {
      norm_mean.resize(e.shape.at(0));
      fill(e, norm_mean.data(), norm_mean.size());
      continue;
    }
    if (e.name == "norm.std") {
      norm_std.resize(e.shape.at(0));
      fill(e, norm_std.data(), norm_std.size());
      continue;
    }
    bool matched = false;
    for (auto& v : views) {
      if (v.name == e.name) {
        fill(e, v.data, v.size);
        matched = true;
        ++filled;
        break;
      }
    }
    if (!matched) throw std::runtime_error("load_model: unknown tensor " + e.name);
  }
  if (filled != views.size()) {
    throw std::runtime_error("load_model: container is missing parameter tensors");
  }
  if (norm_mean.size() > 0 || norm_std.size() > 0) {
    if (norm_mean.size() != norm_std.size()) {
      throw std::runtime_error("load_model: inconsistent normalization tensors");
    }
    bundle.norm = data::Standardizer{norm_mean, norm_std};
  }

  net::check_model(model);
  for (const auto& layer : model.layers) {
    if (const auto* qa = std::get_if<net::QMetricAct>(&layer.act)) {
      if (!cell_feasible(qa->cell)) {
        throw std::runtime_error("load_model: cell parameters violate their constraints");
      }
    }
  }
  bundle.model = std::move(model);
  return bundle;
}

}  // namespace detrame::serialize
