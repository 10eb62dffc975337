#include "audio/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "common/errors.hpp"

namespace csts::audio {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

} // namespace

AudioTrack read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open WAV file '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw FormatError("'" + path + "' is not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char* chunk = bytes.data() + pos;
        const std::uint32_t len = read_u32(chunk + 4);
        const std::size_t body = pos + 8;
        if (body + len > bytes.size()) throw FormatError("'" + path + "' has a truncated chunk");
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (len < 16) throw FormatError("'" + path + "' has a short fmt chunk");
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = bytes.data() + body;
            data_len = len;
        }
        pos = body + len + (len & 1u);
    }
    if (format != 1 || bits != 16)
        throw FormatError("'" + path + "' is not 16-bit PCM (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits)");
    if (channels == 0 || rate == 0) throw FormatError("'" + path + "' has an invalid fmt chunk");
    if (!data) throw FormatError("'" + path + "' has no data chunk");

    AudioTrack track;
    track.sample_rate = rate;
    const std::size_t frames = data_len / (2u * channels);
    track.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const auto raw = static_cast<std::int16_t>(read_u16(data + 2 * (f * channels + c)));
            acc += static_cast<double>(raw) / 32768.0;
        }
        track.samples[f] = acc / channels;
    }
    return track;
}

void write_wav(const std::string& path, const std::vector<std::vector<double>>& channels, int sample_rate) {
    if (channels.empty()) throw ContractError("write_wav: no channels");
    const std::size_t frames = channels[0].size();
    for (const auto& ch : channels)
        if (ch.size() != frames) throw ContractError("write_wav: channel lengths differ");
    const auto nch = static_cast<std::uint16_t>(channels.size());
    const auto data_len = static_cast<std::uint32_t>(frames * nch * 2);

    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1);
    put_u16(out, nch);
    put_u32(out, static_cast<std::uint32_t>(sample_rate));
    put_u32(out, static_cast<std::uint32_t>(sample_rate) * nch * 2);
    put_u16(out, static_cast<std::uint16_t>(nch * 2));
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_len);
    for (std::size_t f = 0; f < frames; ++f)
        for (const auto& ch : channels) {
            const double v = std::clamp(ch[f], -1.0, 1.0);
            const auto q = static_cast<std::int16_t>(std::lround(v * 32767.0));
            put_u16(out, static_cast<std::uint16_t>(q));
        }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write WAV file '" + path + "'");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("short write to '" + path + "'");
}

void write_wav(const std::string& path, const AudioTrack& track) {
    write_wav(path, {track.samples}, static_cast<int>(std::lround(track.sample_rate)));
}

} // namespace csts::audio
