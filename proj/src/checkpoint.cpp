#include "ftm/checkpoint.hpp"

#include <charconv>
#include <cstdio>

namespace ftm {

void append_tensor(std::string& out, const std::string& name,
                   const Eigen::Ref<const Eigen::VectorXd>& values) {
  out += "T " + name + " " + std::to_string(values.size()) + "\n";
  char buf[40];
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), i ? " %.17g" : "%.17g", values(i));
    out += buf;
  }
  out += "\n";
}

bool CheckpointReader::fill() {
  if (has_pending_) return true;
  while (std::getline(in_, pending_)) {
    ++line_;
    if (!pending_.empty()) return has_pending_ = true;
  }
  return false;
}

bool CheckpointReader::at_end() { return !fill(); }

std::vector<std::string> CheckpointReader::next_record() {
  if (!fill()) throw ParseError(line_, "unexpected end of checkpoint");
  has_pending_ = false;
  std::vector<std::string> tokens;
  std::istringstream is(pending_);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

Eigen::VectorXd CheckpointReader::read_tensor(const std::string& expected_name) {
  const auto head = next_record();
  if (head.size() != 3 || head[0] != "T" || head[1] != expected_name) {
    throw ParseError(line_, "expected tensor '" + expected_name + "'");
  }
  const long size = std::stol(head[2]);
  const auto values = next_record();
  if (static_cast<long>(values.size()) != size) {
    throw ParseError(line_, "tensor '" + expected_name + "' has the wrong number of values");
  }
  Eigen::VectorXd v(size);
  for (long i = 0; i < size; ++i) {
    const std::string& s = values[i];
    double x = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ParseError(line_, "malformed value '" + s + "'");
    }
    v(i) = x;
  }
  return v;
}

namespace {

void load_matrix(Mat<double>& m, const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols,
                 int line) {
  if (v.size() != rows * cols) throw ParseError(line, "tensor shape mismatch");
  m = Eigen::Map<const Mat<double>>(v.data(), rows, cols);
}

}  // namespace

LrnnParams CheckpointReader::read_lrnn_block() {
  const auto head = next_record();
  if (head.size() != 5 || head[0] != "LRNN") throw ParseError(line_, "expected LRNN header");
  if (head[1] != "v1") throw ParseError(line_, "unsupported LRNN version '" + head[1] + "'");
  const int hdim = std::stoi(head[2]);
  const int fdim = std::stoi(head[3]);
  const int width = std::stoi(head[4]);
  if (fdim != kArcFeatureDim) throw ParseError(line_, "feature width mismatch");
  if (hdim < 1 || width < 1) throw ParseError(line_, "bad LRNN dimensions");

  LrnnParams p;
  for (auto [dir, name] : {std::pair{&p.encoder.fwd, "enc.fwd."}, std::pair{&p.encoder.bwd, "enc.bwd."}}) {
    const std::string prefix = name;
    load_matrix(dir->w_arc, read_tensor(prefix + "w_arc"), hdim, fdim, line_);
    load_matrix(dir->w_hidden, read_tensor(prefix + "w_hidden"), hdim, hdim, line_);
    dir->bias = read_tensor(prefix + "bias");
    dir->h0 = read_tensor(prefix + "h0");
    if (dir->bias.size() != hdim || dir->h0.size() != hdim) throw ParseError(line_, "bad bias size");
  }
  const Eigen::VectorXd w1 = read_tensor("head.w1");
  if (w1.size() % width != 0) throw ParseError(line_, "head.w1 size is not a multiple of width");
  load_matrix(p.head.w1, w1, w1.size() / width, width, line_);
  p.head.b1 = read_tensor("head.b1");
  p.head.w2 = read_tensor("head.w2");
  const Eigen::VectorXd b2 = read_tensor("head.b2");
  if (p.head.b1.size() != p.head.w1.rows() || p.head.w2.size() != p.head.w1.rows() ||
      b2.size() != 1) {
    throw ParseError(line_, "head tensor sizes disagree");
  }
  p.head.b2 = b2(0);
  return p;
}

}  // namespace ftm
