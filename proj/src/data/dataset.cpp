#include "data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "data/image.hpp"
#include "json.hpp"

namespace csts::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<fs::path> frame_files(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

void check_gaze(const std::vector<model::GazePoint>& gaze, std::vector<std::string>& problems) {
    for (std::size_t i = 0; i < gaze.size(); ++i) {
        const auto& g = gaze[i];
        if (!g.valid) continue;
        if (!(g.x >= 0.0 && g.x <= 1.0 && g.y >= 0.0 && g.y <= 1.0)) {
            std::ostringstream os;
            os << "gaze at frame " << i << " outside [0,1]: (" << g.x << ", " << g.y << ")";
            problems.push_back(os.str());
        }
    }
}

std::vector<model::GazePoint> inline_gaze(const json& arr, Index n_frames) {
    std::vector<model::GazePoint> gaze(static_cast<std::size_t>(n_frames), model::GazePoint{0.5, 0.5, false});
    for (const auto& r : arr) {
        const Index f = r.at("frame").get<Index>();
        if (f < 0 || f >= n_frames) throw RangeError("gaze frame " + std::to_string(f) + " outside the clip");
        const bool valid = r.value("valid", true);
        gaze[static_cast<std::size_t>(f)] = {r.at("x").get<double>(), r.at("y").get<double>(), valid};
    }
    return gaze;
}

} // namespace

std::vector<model::GazePoint> read_gaze_csv(const std::string& path, Index n_frames) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::vector<model::GazePoint> gaze(static_cast<std::size_t>(n_frames), model::GazePoint{0.5, 0.5, false});
    std::string line;
    std::getline(is, line);
    if (line.rfind("frame_index", 0) != 0) throw FormatError(path + ": missing frame_index,x,y,valid header");
    Index row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell[4];
        for (auto& c : cell)
            if (!std::getline(ls, c, ',')) throw FormatError(path + ": row " + std::to_string(row) + " needs 4 fields");
        Index f;
        model::GazePoint g;
        try {
            f = std::stoll(cell[0]);
            g.x = std::stod(cell[1]);
            g.y = std::stod(cell[2]);
            g.valid = std::stoi(cell[3]) != 0;
        } catch (const std::exception&) {
            throw FormatError(path + ": row " + std::to_string(row) + " is not numeric");
        }
        if (f < 0 || f >= n_frames) throw RangeError(path + ": frame " + std::to_string(f) + " outside the clip");
        gaze[static_cast<std::size_t>(f)] = g;
    }
    return gaze;
}

void write_gaze_csv(const std::string& path, const std::vector<model::GazePoint>& gaze) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "frame_index,x,y,valid\n";
    char buf[96];
    for (std::size_t i = 0; i < gaze.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%d\n", i, gaze[i].x, gaze[i].y, gaze[i].valid ? 1 : 0);
        os << buf;
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<ClipManifest> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest " + path);
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    if (!doc.is_array()) throw FormatError(path + ": manifest must be a JSON array of clip records");
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    std::vector<ClipManifest> clips;
    std::vector<std::string> errors;
    for (std::size_t r = 0; r < doc.size(); ++r) {
        const json& rec = doc[r];
        std::string id = "#" + std::to_string(r);
        std::vector<std::string> problems;
        ClipManifest c;
        try {
            if (!rec.is_object()) throw FormatError("record is not an object");
            id = rec.at("id").get<std::string>();
            c.id = id;
            c.fps = rec.at("fps").get<double>();
            if (!(c.fps > 0.0)) problems.push_back("fps must be positive");
            c.split = rec.value("split", std::string("train"));
            if (c.split != "train" && c.split != "test") problems.push_back("split must be train or test, got '" + c.split + "'");

            const fs::path frames = resolve(rec.at("frames").get<std::string>());
            c.frames = frames.string();
            if (!fs::exists(frames)) {
                problems.push_back("frames path does not exist: " + c.frames);
            } else if (fs::is_directory(frames)) {
                c.n_frames = static_cast<Index>(frame_files(frames).size());
                if (c.n_frames == 0) problems.push_back("no PNG frames in " + c.frames);
            } else {
                c.packed = true;
                c.n_frames = packed_frame_count(c.frames);
            }

            const fs::path audio = resolve(rec.at("audio").get<std::string>());
            c.audio = audio.string();
            if (!fs::is_regular_file(audio)) problems.push_back("audio file does not exist: " + c.audio);

            const json& g = rec.at("gaze");
            if (g.is_string()) {
                const fs::path gp = resolve(g.get<std::string>());
                if (!fs::is_regular_file(gp)) problems.push_back("gaze file does not exist: " + gp.string());
                else if (c.n_frames > 0) c.gaze = read_gaze_csv(gp.string(), c.n_frames);
            } else if (g.is_array()) {
                c.gaze = inline_gaze(g, c.n_frames);
            } else {
                problems.push_back("gaze must be a CSV path or an array of records");
            }
            check_gaze(c.gaze, problems);
        } catch (const json::exception& e) {
            problems.push_back(std::string("malformed record: ") + e.what());
        } catch (const Error& e) {
            problems.push_back(e.what());
        }
        for (const auto& p : problems) errors.push_back("clip '" + id + "': " + p);
        if (problems.empty()) clips.push_back(std::move(c));
    }
    if (!errors.empty()) {
        std::string msg = path + ": " + std::to_string(errors.size()) + " problem(s)";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    return clips;
}

std::vector<ClipManifest> filter_split(const std::vector<ClipManifest>& clips, const std::string& split) {
    std::vector<ClipManifest> out;
    for (const auto& c : clips)
        if (c.split == split) out.push_back(c);
    return out;
}

std::vector<Index> uniform_indices(Index first, Index count, Index k) {
    if (count < 1 || k < 1) throw ContractError("uniform_indices: empty range");
    std::vector<Index> idx(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) {
        const double pos = k == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(count - 1) / static_cast<double>(k - 1);
        idx[static_cast<std::size_t>(i)] = first + std::lround(pos);
    }
    return idx;
}

void sample_indices(const ClipManifest& clip, double anchor, const SamplingConfig& cfg,
                    std::vector<Index>& input, std::vector<Index>& target) {
    const Index obs_first = std::lround((anchor - cfg.observation_seconds) * clip.fps);
    const Index obs_count = std::lround(cfg.observation_seconds * clip.fps);
    const Index ant_first = std::lround(anchor * clip.fps);
    const Index ant_count = std::lround(cfg.anticipation_seconds * clip.fps);
    if (obs_first < 0 || ant_first + ant_count > clip.n_frames || obs_count < 1 || ant_count < 1) {
        std::ostringstream os;
        os << "clip '" << clip.id << "' (" << clip.n_frames << " frames at " << clip.fps << " fps) is too short for anchor "
           << anchor << " s with windows " << cfg.observation_seconds << " s / " << cfg.anticipation_seconds << " s";
        throw RangeError(os.str());
    }
    input = uniform_indices(obs_first, obs_count, cfg.input_frames);
    target = uniform_indices(ant_first, ant_count, cfg.target_frames);
}

Image read_frame(const ClipManifest& clip, Index index) {
    if (index < 0 || index >= clip.n_frames)
        throw RangeError("clip '" + clip.id + "': frame " + std::to_string(index) + " out of range");
    if (clip.packed) return read_packed(clip.frames)[static_cast<std::size_t>(index)];
    const auto files = frame_files(clip.frames);
    if (static_cast<Index>(files.size()) != clip.n_frames)
        throw StateError("clip '" + clip.id + "': frame count changed since the manifest was loaded");
    return read_png(files[static_cast<std::size_t>(index)].string());
}

ClipSample load_clip(const ClipManifest& clip, double anchor, const SamplingConfig& cfg) {
    ClipSample s;
    s.clip_id = clip.id;
    s.anchor = anchor;
    sample_indices(clip, anchor, cfg, s.input_indices, s.target_indices);

    std::vector<Image> packed;
    std::vector<fs::path> files;
    if (clip.packed) packed = read_packed(clip.frames);
    else files = frame_files(clip.frames);
    const Index n_avail = clip.packed ? static_cast<Index>(packed.size()) : static_cast<Index>(files.size());
    if (n_avail != clip.n_frames) throw StateError("clip '" + clip.id + "': frame count changed since the manifest was loaded");

    const Index h = cfg.image_height, w = cfg.image_width;
    std::vector<double> frames;
    frames.reserve(static_cast<std::size_t>(cfg.input_frames * h * w * 3));
    for (Index i : s.input_indices) {
        const Image img = clip.packed ? packed[static_cast<std::size_t>(i)] : read_png(files[static_cast<std::size_t>(i)].string());
        const Image r = resize(img, w, h);
        for (auto p : r.pixels) frames.push_back(p / 255.0);
        s.input_times.push_back(static_cast<double>(i) / clip.fps);
    }
    s.frames = Tensor::from_data({cfg.input_frames, h, w, 3}, std::move(frames));

    const audio::AudioTrack track = audio::read_wav(clip.audio);
    if (track.duration() + 0.5 / clip.fps < anchor)
        throw RangeError("clip '" + clip.id + "': audio is shorter than the observation window");
    s.spectrograms = audio::spectrogram_stack(track, s.input_times, cfg.spectrogram).values;

    for (Index i : s.target_indices) {
        s.gaze.push_back(clip.gaze[static_cast<std::size_t>(i)]);
        s.target_times.push_back(static_cast<double>(i) / clip.fps);
    }
    return s;
}

} // namespace csts::data
