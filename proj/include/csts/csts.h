#ifndef CSTS_CSTS_H
#define CSTS_CSTS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CSTS_API __declspec(dllexport)
#else
#define CSTS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

// Every call returns a status; on failure csts_last_error() holds a message
// for the calling thread until its next failing call.
typedef enum csts_status {
    CSTS_OK = 0,
    CSTS_ERR_ARGUMENT = 1,  // null handle, null output pointer, bad option string
    CSTS_ERR_DIMENSION = 2,
    CSTS_ERR_CONTRACT = 3,
    CSTS_ERR_CONFIG = 4,
    CSTS_ERR_RANGE = 5,
    CSTS_ERR_FORMAT = 6,
    CSTS_ERR_IO = 7,
    CSTS_ERR_NUMERIC = 8,
    CSTS_ERR_STATE = 9,
    CSTS_ERR_EVALUATION = 10,
    CSTS_ERR_VALIDATION = 11,
    CSTS_ERR_VERIFICATION = 12,
    CSTS_ERR_INTERNAL = 13
} csts_status;

typedef struct csts_config csts_config;    // training + model configuration
typedef struct csts_dataset csts_dataset;  // both splits of a manifest, in memory
typedef struct csts_model csts_model;      // weights restored from a checkpoint

CSTS_API const char* csts_version(void);
CSTS_API const char* csts_status_name(csts_status status);
CSTS_API const char* csts_last_error(void);

// Strings returned through char** outputs are owned by the caller.
CSTS_API void csts_string_free(char* s);

// Configuration. JSON objects use the same keys as config files; unknown
// keys are rejected.
CSTS_API csts_status csts_config_new(csts_config** out);
CSTS_API csts_status csts_config_load(const char* path, csts_config** out);
CSTS_API csts_status csts_config_from_json(const char* json, csts_config** out);
// Applies overrides on top of the current values.
CSTS_API csts_status csts_config_merge_json(csts_config* cfg, const char* json);
CSTS_API csts_status csts_config_to_json(const csts_config* cfg, char** out);
// Parameter count of the model the config builds.
CSTS_API csts_status csts_config_parameter_count(const csts_config* cfg, size_t* out);
CSTS_API void csts_config_free(csts_config* cfg);

// Dataset. Clip sampling follows the config; threads = 0 uses CSTS_THREADS.
CSTS_API csts_status csts_dataset_load(const char* manifest, const csts_config* cfg, unsigned threads,
                                       csts_dataset** out);
CSTS_API csts_status csts_dataset_size(const csts_dataset* ds, size_t* train, size_t* test);
CSTS_API void csts_dataset_free(csts_dataset* ds);

// Model. The checkpoint's stored training config is kept with the weights.
CSTS_API csts_status csts_model_load(const char* checkpoint, csts_model** out);
CSTS_API csts_status csts_model_parameter_count(const csts_model* m, size_t* out);
// {"model": ..., "train": ...}
CSTS_API csts_status csts_model_config_json(const csts_model* m, char** out);
CSTS_API void csts_model_free(csts_model* m);

// Receives one JSON object per event; the string is valid during the call.
typedef void (*csts_event_fn)(const char* json, void* user);

// Trains on the dataset's train split and evaluates on its test split.
// Writes config.json, train_log.jsonl, eval_log.jsonl, model.ckpt,
// eval.json and per_frame.csv under out_dir (nothing when out_dir is NULL).
// report: {"steps", "final_kld", "checkpoint", "eval"}.
CSTS_API csts_status csts_train(const csts_config* cfg, const csts_dataset* ds, const char* out_dir,
                                csts_event_fn on_step, void* user, char** report);

// Test-split F1, precision and recall. gamma and precision come from
// settings, or from the checkpoint when settings is NULL. Writes eval.json
// and per_frame.csv when out_dir is set.
// report: the evaluation JSON plus "table" (plain-text summary).
CSTS_API csts_status csts_evaluate(const csts_model* m, const csts_dataset* ds, const csts_config* settings,
                                   const char* out_dir, char** report);

// Generates a synthetic corpus. options: JSON object with any of clips,
// seed, fps, duration, anchor, width, height, sample_rate, cue_validity,
// distractors, test_fraction, missing_gaze, left_tone_hz, right_tone_hz,
// packed. summary: {"manifest", "clips": [{id, split, drift_side, tone_side}]}.
CSTS_API csts_status csts_synth(const char* options, const char* out_dir, char** summary);

// Finite-difference check of the total loss against backpropagated
// gradients for every model variant built around cfg, plus every
// differentiable op on its own. passed is 1 iff all relative errors are
// below tolerance. report: JSON plus "table" (worst error per module).
CSTS_API csts_status csts_gradcheck(const csts_config* cfg, double tolerance, char** report, int* passed);

// Test hook: negates the backward pass of the named op in this process.
// NULL or "" restores normal behaviour.
CSTS_API csts_status csts_set_gradient_sabotage(const char* op);

// Trains and evaluates a grid of configurations. grid is a grid name
// (table1, table2, contrastive, trend, single) or a JSON grid. seeds may be
// NULL to use the config's seed. threads = 0 uses CSTS_THREADS.
// Writes ablation.json, ablation.csv and per-cell logs under out_dir.
// result: {"cells", "summary", "table"}.
CSTS_API csts_status csts_ablate(const csts_config* base, const csts_dataset* ds, const char* grid,
                                 const uint64_t* seeds, size_t n_seeds, unsigned threads, const char* out_dir,
                                 csts_event_fn on_cell, void* user, char** result);

// Spatial audio-visual correlation of one clip: per token frame, a grayscale
// map upsampled to frame size (clip_<id>_t<k>_attn.png) and an overlay on the
// matching input frame (clip_<id>_t<k>_overlay.png). files: JSON array.
CSTS_API csts_status csts_dump_attention(const csts_model* m, const char* manifest, const char* clip_id,
                                         const char* out_dir, char** files);

// Predicted heatmap of every future frame over that frame, with the true
// gaze as a dot (clip_<id>_f<k>_pred.png). Frames without a gaze label get
// no dot and the suffix _nogaze. files: JSON array.
CSTS_API csts_status csts_render_prediction(const csts_model* m, const char* manifest, const char* clip_id,
                                            const char* out_dir, char** files);

#ifdef __cplusplus
}
#endif

#endif
