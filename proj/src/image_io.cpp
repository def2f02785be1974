#include "trajguard/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

// jpeglib.h needs FILE and size_t declared first
#include <jpeglib.h>

namespace trajguard {

std::uint8_t to_byte(double v) {
  const double s = std::round((v + 1.0) * 127.5);
  if (!(s > 0.0)) return 0;
  if (s >= 255.0) return 255;
  return static_cast<std::uint8_t>(s);
}

double from_byte(std::uint8_t b) { return b / 127.5 - 1.0; }

Tensor quantize_8bit(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = from_byte(to_byte(x[i]));
  return out;
}

namespace {

void require_image_shape(const Tensor& x) {
  const Shape s = x.shape();
  if (s.channels != 1 && s.channels != 3)
    throw ParameterError("images need 1 or 3 channels, got " + s.str());
  if (s.height < 1 || s.width < 1) throw ParameterError("empty image " + s.str());
}

// interleaved HWC bytes
Bytes to_interleaved(const Tensor& x) {
  const Shape s = x.shape();
  Bytes px(s.numel());
  for (int y = 0; y < s.height; ++y)
    for (int xx = 0; xx < s.width; ++xx)
      for (int c = 0; c < s.channels; ++c)
        px[(static_cast<std::size_t>(y) * s.width + xx) * s.channels + c] = to_byte(x.at(c, y, xx));
  return px;
}

Tensor from_interleaved(const Bytes& px, int channels, int height, int width) {
  Tensor out(Shape{channels, height, width});
  for (int y = 0; y < height; ++y)
    for (int xx = 0; xx < width; ++xx)
      for (int c = 0; c < channels; ++c)
        out.at(c, y, xx) =
            from_byte(px[(static_cast<std::size_t>(y) * width + xx) * channels + c]);
  return out;
}

void png_error_handler(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  *err = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

struct PngReadState {
  const Bytes* data;
  std::size_t offset;
};

void png_read_bytes(png_structp png, png_bytep out, png_size_t n) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + n > st->data->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, st->data->data() + st->offset, n);
  st->offset += n;
}

void png_write_bytes(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + n);
}

void png_flush_noop(png_structp) {}

}  // namespace

namespace {

// The setjmp frames below hold only pointers and PODs; C++ objects live in callers.
struct PngWriteJob {
  int width, height, channels;
  png_const_bytep* rows;
  png_text* chunks;
  int chunk_count;
  Bytes* out;
  std::string* err;
};

bool png_write_raw(const PngWriteJob& job) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, job.err, png_error_handler,
                                            png_warning_handler);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, job.out, png_write_bytes, png_flush_noop);
  png_set_IHDR(png, info, job.width, job.height, 8,
               job.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (job.chunk_count > 0) png_set_text(png, info, job.chunks, job.chunk_count);
  png_write_info(png, info);
  png_write_rows(png, const_cast<png_bytepp>(job.rows), job.height);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

// Decoded image dimensions, shared by the PNG and JPEG readers.
struct PngHeader {
  int width = 0, height = 0, channels = 0;
};

// Reads the header (and text chunks when `text` is set); with `pixels` set also the
// image, after calling pixels(header) to obtain row pointers.
struct PngReadJob {
  PngReadState* state;
  std::string* err;
  PngHeader* header;
  TextChunks* text;
  png_bytep* (*rows_for)(void* ctx, const PngHeader& h);
  void* ctx;
};

bool png_read_raw(const PngReadJob& job) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, job.err, png_error_handler,
                                           png_warning_handler);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, job.state, png_read_bytes);
  png_read_info(png, info);
  if (job.text) {
    png_textp chunks = nullptr;
    const int n = png_get_text(png, info, &chunks, nullptr);
    for (int i = 0; i < n; ++i)
      job.text->emplace_back(chunks[i].key, std::string(chunks[i].text, chunks[i].text_length));
  }
  if (job.rows_for) {
    const png_byte color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
      png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    job.header->width = static_cast<int>(png_get_image_width(png, info));
    job.header->height = static_cast<int>(png_get_image_height(png, info));
    job.header->channels = png_get_channels(png, info);
    png_read_image(png, job.rows_for(job.ctx, *job.header));
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

struct PixelSink {
  Bytes px;
  std::vector<png_bytep> rows;
};

png_bytep* pixel_rows(void* ctx, const PngHeader& h) {
  auto* sink = static_cast<PixelSink*>(ctx);
  const std::size_t stride = static_cast<std::size_t>(h.width) * h.channels;
  sink->px.resize(stride * h.height);
  sink->rows.resize(h.height);
  for (int y = 0; y < h.height; ++y) sink->rows[y] = sink->px.data() + y * stride;
  return sink->rows.data();
}

void require_png_signature(const Bytes& data) {
  if (data.size() < 8 || png_sig_cmp(data.data(), 0, 8) != 0)
    throw ImageError("not a PNG stream");
}

}  // namespace

Bytes encode_png(const Tensor& x, const TextChunks& text) {
  require_image_shape(x);
  const Shape s = x.shape();
  const Bytes px = to_interleaved(x);
  std::vector<png_const_bytep> rows(s.height);
  for (int y = 0; y < s.height; ++y)
    rows[y] = px.data() + static_cast<std::size_t>(y) * s.width * s.channels;
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<png_charp>(text[i].first.c_str());
    chunks[i].text = const_cast<png_charp>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }
  Bytes out;
  std::string err;
  const PngWriteJob job{s.width,       s.height, s.channels, rows.data(), chunks.data(),
                        static_cast<int>(chunks.size()), &out, &err};
  if (!png_write_raw(job)) throw ImageError("PNG encode failed: " + err);
  return out;
}

Tensor decode_png(const Bytes& data) {
  require_png_signature(data);
  PngReadState st{&data, 0};
  std::string err;
  PngHeader header;
  PixelSink sink;
  if (!png_read_raw({&st, &err, &header, nullptr, pixel_rows, &sink}))
    throw ImageError("PNG decode failed: " + err);
  return from_interleaved(sink.px, header.channels, header.height, header.width);
}

TextChunks read_png_text(const Bytes& data) {
  require_png_signature(data);
  PngReadState st{&data, 0};
  std::string err;
  PngHeader header;
  TextChunks text;
  if (!png_read_raw({&st, &err, &header, &text, nullptr, nullptr}))
    throw ImageError("PNG decode failed: " + err);
  return text;
}

Tensor read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_file(path));
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Tensor& x, const TextChunks& text) {
  write_file_atomic(path, encode_png(x, text));
}


namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, mgr->message);
  std::longjmp(mgr->jump, 1);
}

void jpeg_silent(j_common_ptr, int) {}

struct JpegEncodeJob {
  int width, height, channels, quality;
  const std::uint8_t* pixels;
  unsigned char** buffer;
  unsigned long* size;
  char* message;
};

bool jpeg_encode_raw(const JpegEncodeJob& job) {
  jpeg_compress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silent;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::memcpy(job.message, err.message, JMSG_LENGTH_MAX);
    return false;
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, job.buffer, job.size);
  cinfo.image_width = static_cast<JDIMENSION>(job.width);
  cinfo.image_height = static_cast<JDIMENSION>(job.height);
  cinfo.input_components = job.channels;
  cinfo.in_color_space = job.channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, job.quality, TRUE);
  for (int c = 0; c < cinfo.num_components; ++c) {
    cinfo.comp_info[c].h_samp_factor = 1;
    cinfo.comp_info[c].v_samp_factor = 1;
  }
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = static_cast<std::size_t>(job.width) * job.channels;
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(job.pixels + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  return true;
}

struct JpegDecodeJob {
  const std::uint8_t* data;
  std::size_t size;
  PngHeader* header;
  std::uint8_t* (*pixels_for)(void* ctx, const PngHeader& h);
  void* ctx;
  char* message;
};

std::uint8_t* pixel_buffer(void* ctx, const PngHeader& h) {
  auto* px = static_cast<Bytes*>(ctx);
  px->resize(static_cast<std::size_t>(h.width) * h.height * h.channels);
  return px->data();
}

bool jpeg_decode_raw(const JpegDecodeJob& job) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_silent;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::memcpy(job.message, err.message, JMSG_LENGTH_MAX);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, job.data, static_cast<unsigned long>(job.size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.dct_method = JDCT_ISLOW;
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  job.header->width = static_cast<int>(cinfo.output_width);
  job.header->height = static_cast<int>(cinfo.output_height);
  job.header->channels = cinfo.output_components;
  std::uint8_t* px = job.pixels_for(job.ctx, *job.header);
  const std::size_t stride = static_cast<std::size_t>(job.header->width) * job.header->channels;
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

}  // namespace

Bytes encode_jpeg(const Tensor& x, int quality) {
  require_image_shape(x);
  if (quality < 1 || quality > 100) throw ParameterError("JPEG quality must be in [1,100]");
  const Shape s = x.shape();
  const Bytes px = to_interleaved(x);
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  char message[JMSG_LENGTH_MAX] = {};
  const bool ok =
      jpeg_encode_raw({s.width, s.height, s.channels, quality, px.data(), &buffer, &size, message});
  Bytes out;
  if (ok) out.assign(buffer, buffer + size);
  std::free(buffer);
  if (!ok) throw ImageError(std::string("JPEG encode failed: ") + message);
  return out;
}

Tensor decode_jpeg(const Bytes& data) {
  PngHeader header;
  Bytes px;
  char message[JMSG_LENGTH_MAX] = {};
  if (!jpeg_decode_raw({data.data(), data.size(), &header, pixel_buffer, &px, message}))
    throw ImageError(std::string("JPEG decode failed: ") + message);
  return from_interleaved(px, header.channels, header.height, header.width);
}

Tensor jpeg_round_trip(const Tensor& x, int quality) {
  return decode_jpeg(encode_jpeg(x, quality));
}

std::string codec_versions() {
  std::string s = "libpng " PNG_LIBPNG_VER_STRING "; ";
#ifdef LIBJPEG_TURBO_VERSION
#define TRAJGUARD_STR2(x) #x
#define TRAJGUARD_STR(x) TRAJGUARD_STR2(x)
  s += "libjpeg-turbo " TRAJGUARD_STR(LIBJPEG_TURBO_VERSION) " ";
#endif
  s += "(jpeg " + std::to_string(JPEG_LIB_VERSION) + ")";
  return s;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

namespace {

void write_atomic(const std::filesystem::path& path, const char* data, std::size_t n) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(data, static_cast<std::streamsize>(n));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const Bytes& data) {
  write_atomic(path, reinterpret_cast<const char*>(data.data()), data.size());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
  write_atomic(path, data.data(), data.size());
}

}  // namespace trajguard
