#pragma once

// Line-oriented readers and writers over plain or zstandard-compressed
// files. Compression is chosen by extension: a path ending in ".zst" is a
// zstd frame sequence, anything else is plain bytes.

#include <zstd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "corpus_prune/error.hpp"

namespace corpus_prune {

inline bool is_zstd_path(const std::filesystem::path& p) {
  return p.extension() == ".zst";
}

class LineReader {
 public:
  explicit LineReader(std::filesystem::path path) : path_(std::move(path)) {
    in_.open(path_, std::ios::binary);
    if (!in_) throw Error(ErrorKind::io, "cannot open " + path_.string());
    if (is_zstd_path(path_)) {
      dctx_.reset(ZSTD_createDStream());
      if (!dctx_) throw Error(ErrorKind::io, "zstd: cannot allocate decoder");
      raw_.resize(ZSTD_DStreamInSize());
    }
  }

  // Next line without its trailing '\n' (a trailing '\r' is kept as data).
  std::optional<std::string> next() {
    while (true) {
      const auto nl = buf_.find('\n', scan_);
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        scan_ = 0;
        return line;
      }
      scan_ = buf_.size();
      if (!fill()) {
        if (buf_.empty()) return std::nullopt;
        std::string line = std::move(buf_);
        buf_.clear();
        scan_ = 0;
        return line;
      }
    }
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  struct DStreamFree {
    void operator()(ZSTD_DStream* d) const noexcept { ZSTD_freeDStream(d); }
  };

  bool fill() {
    if (!dctx_) {
      char chunk[1 << 16];
      in_.read(chunk, sizeof chunk);
      const auto got = static_cast<std::size_t>(in_.gcount());
      if (in_.bad()) throw Error(ErrorKind::io, "read failed: " + path_.string());
      buf_.append(chunk, got);
      return got > 0;
    }
    std::vector<char> out(ZSTD_DStreamOutSize());
    while (true) {
      if (in_pos_ == in_len_ && !more_output_) {
        if (eof_) {
          if (!frame_done_)
            throw Error(ErrorKind::parse, path_.string() + ": truncated zstd stream");
          return false;
        }
        in_.read(raw_.data(), static_cast<std::streamsize>(raw_.size()));
        in_len_ = static_cast<std::size_t>(in_.gcount());
        in_pos_ = 0;
        if (in_len_ == 0) {
          eof_ = true;
          continue;
        }
      }
      ZSTD_inBuffer input{raw_.data(), in_len_, in_pos_};
      ZSTD_outBuffer output{out.data(), out.size(), 0};
      const std::size_t rc = ZSTD_decompressStream(dctx_.get(), &output, &input);
      if (ZSTD_isError(rc))
        throw Error(ErrorKind::parse,
                    path_.string() + ": zstd: " + ZSTD_getErrorName(rc));
      in_pos_ = input.pos;
      frame_done_ = (rc == 0);
      more_output_ = output.pos == output.size;
      if (output.pos > 0) {
        buf_.append(out.data(), output.pos);
        return true;
      }
    }
  }

  std::filesystem::path path_;
  std::ifstream in_;
  std::unique_ptr<ZSTD_DStream, DStreamFree> dctx_;
  std::vector<char> raw_;
  std::size_t in_len_ = 0;
  std::size_t in_pos_ = 0;
  bool eof_ = false;
  bool frame_done_ = true;
  bool more_output_ = false;
  std::string buf_;
  std::size_t scan_ = 0;
};

class LineWriter {
 public:
  explicit LineWriter(std::filesystem::path path, int zstd_level = 3)
      : path_(std::move(path)) {
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(ErrorKind::io, "cannot create " + path_.string());
    if (is_zstd_path(path_)) {
      cctx_.reset(ZSTD_createCCtx());
      if (!cctx_) throw Error(ErrorKind::io, "zstd: cannot allocate encoder");
      ZSTD_CCtx_setParameter(cctx_.get(), ZSTD_c_compressionLevel, zstd_level);
      chunk_.resize(ZSTD_CStreamOutSize());
    }
  }

  LineWriter(const LineWriter&) = delete;
  LineWriter& operator=(const LineWriter&) = delete;

  ~LineWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  void write_line(std::string_view line) {
    pending_.append(line);
    pending_.push_back('\n');
    if (pending_.size() >= (1 << 16)) drain(ZSTD_e_continue);
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    drain(ZSTD_e_end);
    out_.close();
    if (out_.fail()) throw Error(ErrorKind::io, "write failed: " + path_.string());
  }

 private:
  struct CCtxFree {
    void operator()(ZSTD_CCtx* c) const noexcept { ZSTD_freeCCtx(c); }
  };

  void drain(ZSTD_EndDirective mode) {
    if (!cctx_) {
      out_.write(pending_.data(), static_cast<std::streamsize>(pending_.size()));
      pending_.clear();
      if (!out_) throw Error(ErrorKind::io, "write failed: " + path_.string());
      return;
    }
    ZSTD_inBuffer input{pending_.data(), pending_.size(), 0};
    while (true) {
      ZSTD_outBuffer output{chunk_.data(), chunk_.size(), 0};
      const std::size_t rc = ZSTD_compressStream2(cctx_.get(), &output, &input, mode);
      if (ZSTD_isError(rc))
        throw Error(ErrorKind::io, path_.string() + ": zstd: " + ZSTD_getErrorName(rc));
      out_.write(chunk_.data(), static_cast<std::streamsize>(output.pos));
      if (!out_) throw Error(ErrorKind::io, "write failed: " + path_.string());
      const bool finished = mode == ZSTD_e_end ? rc == 0 : input.pos == input.size;
      if (finished) break;
    }
    pending_.clear();
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::unique_ptr<ZSTD_CCtx, CCtxFree> cctx_;
  std::vector<char> chunk_;
  std::string pending_;
  bool closed_ = false;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::io, "read failed: " + path.string());
  return data;
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot create " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.close();
  if (out.fail()) throw Error(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace corpus_prune
