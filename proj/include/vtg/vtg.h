#ifndef VTG_VTG_H
#define VTG_VTG_H

/*
 * C interface to the grounding library. Every call returns a vtg_status;
 * on failure vtg_last_error() describes the problem (per thread). Strings
 * handed out through char** are owned by the caller and released with
 * vtg_string_free.
 */

#include <stdint.h>

#if defined(_WIN32)
#define VTG_API __declspec(dllexport)
#else
#define VTG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vtg_status {
  VTG_OK = 0,
  VTG_ERR_INVALID_ARGUMENT = 1,
  VTG_ERR_SHAPE = 2,
  VTG_ERR_IO = 3,
  VTG_ERR_PARSE = 4,
  VTG_ERR_NON_FINITE = 5,
  VTG_ERR_INTERNAL = 6
} vtg_status;

typedef struct vtg_config vtg_config;
typedef struct vtg_model vtg_model;

/* Receives one JSON document per event (epoch log line, ablation progress). */
typedef void (*vtg_progress_fn)(const char* json, void* user);

VTG_API const char* vtg_version(void);
VTG_API const char* vtg_last_error(void);
VTG_API void vtg_string_free(char* s);

/* Configuration. path == NULL yields the defaults. */
VTG_API vtg_status vtg_config_load(const char* path, vtg_config** out);
VTG_API void vtg_config_free(vtg_config* cfg);
/* Sets a dotted key ("model.gates") to a JSON value ("\"local\"", "0.5"). */
VTG_API vtg_status vtg_config_set(vtg_config* cfg, const char* key, const char* json_value);
VTG_API vtg_status vtg_config_set_seed(vtg_config* cfg, uint64_t seed);
VTG_API vtg_status vtg_config_to_json(const vtg_config* cfg, char** out);

/* Trains under the config's train.out_dir; *summary_json describes the run. */
VTG_API vtg_status vtg_train(const vtg_config* cfg, vtg_progress_fn progress, void* user, char** summary_json);

VTG_API vtg_status vtg_model_load(const char* checkpoint_path, vtg_model** out);
VTG_API void vtg_model_free(vtg_model* model);
VTG_API vtg_status vtg_model_config(const vtg_model* model, char** config_json);
/* mode: NULL, "standard" or "gate_saliency". */
VTG_API vtg_status vtg_model_evaluate(const vtg_model* model, const char* split, const char* mode, char** report_json);
/* Writes one JSON line per record; records whose features fail to load are
 * listed under "errors" in *summary_json and skipped. */
VTG_API vtg_status vtg_model_predict(const vtg_model* model, const char* split, const char* out_path,
                                     char** summary_json);

/* Metrics computed from a prediction file alone. */
VTG_API vtg_status vtg_evaluate_predictions(const char* path, const char* mode, char** report_json);

VTG_API vtg_status vtg_ablate(const vtg_config* cfg, const char* grid_path, vtg_progress_fn progress, void* user,
                              char** table_json);

/* qids_csv: comma-separated subset, or NULL for every record. */
VTG_API vtg_status vtg_plot(const char* prediction_path, const char* out_dir, const char* qids_csv, int top_k,
                            int* files_written);

#ifdef __cplusplus
}
#endif

#endif /* VTG_VTG_H */
