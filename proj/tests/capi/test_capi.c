/* Exercises the shared library through its C header only. */

#include "vtg/vtg.h"

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static int epochs_seen = 0;

static void on_progress(const char* json, void* user) {
  (void)user;
  if (strstr(json, "\"epoch\"")) ++epochs_seen;
}

static void set(vtg_config* cfg, const char* key, const char* value) {
  vtg_status s = vtg_config_set(cfg, key, value);
  if (s != VTG_OK) fprintf(stderr, "set %s: %s\n", key, vtg_last_error());
  EXPECT(s == VTG_OK);
}

int main(int argc, char** argv) {
  const char* out_dir = argc > 1 ? argv[1] : "capi_out";
  char path[1024];
  char* text = NULL;
  vtg_config* cfg = NULL;
  vtg_model* model = NULL;
  int written = 0;

  EXPECT(strcmp(vtg_version(), "1.0.0") == 0);
  EXPECT(vtg_config_load("/nonexistent/config.json", &cfg) == VTG_ERR_IO);
  EXPECT(strlen(vtg_last_error()) > 0);
  EXPECT(vtg_config_load(NULL, NULL) == VTG_ERR_INVALID_ARGUMENT);

  EXPECT(vtg_config_load(NULL, &cfg) == VTG_OK);
  set(cfg, "model.dim", "8");
  set(cfg, "model.heads", "2");
  set(cfg, "interaction.heads", "2");
  set(cfg, "model.ffn_mult", "2");
  set(cfg, "decoder.queries", "4");
  set(cfg, "optim.epochs", "2");
  set(cfg, "optim.batch_size", "4");
  set(cfg, "data.n_train", "8");
  set(cfg, "data.n_val", "4");
  set(cfg, "data.synthetic.video_len", "[8, 8]");
  set(cfg, "data.synthetic.d_v", "8");
  set(cfg, "data.synthetic.d_t", "4");
  set(cfg, "model.gates", "local");
  set(cfg, "train.out_dir", out_dir);
  EXPECT(vtg_config_set(cfg, "model.nonsense", "1") == VTG_ERR_INVALID_ARGUMENT);
  EXPECT(vtg_config_set_seed(cfg, 5) == VTG_OK);

  EXPECT(vtg_config_to_json(cfg, &text) == VTG_OK);
  EXPECT(text && strstr(text, "\"local\""));
  vtg_string_free(text);

  text = NULL;
  EXPECT(vtg_train(cfg, on_progress, NULL, &text) == VTG_OK);
  EXPECT(epochs_seen == 2);
  EXPECT(text && strstr(text, "best_checkpoint"));
  vtg_string_free(text);

  snprintf(path, sizeof path, "%s/last.ckpt", out_dir);
  EXPECT(vtg_model_load(path, &model) == VTG_OK);
  text = NULL;
  EXPECT(vtg_model_evaluate(model, "val", NULL, &text) == VTG_OK);
  EXPECT(text && strstr(text, "R1@0.5"));
  vtg_string_free(text);
  text = NULL;
  EXPECT(vtg_model_evaluate(model, "val", "gate_saliency", &text) == VTG_OK);
  EXPECT(text && !strstr(text, "R1@0.5"));
  vtg_string_free(text);
  EXPECT(vtg_model_evaluate(model, "val", "bogus", &text) == VTG_ERR_INVALID_ARGUMENT);

  snprintf(path, sizeof path, "%s/pred.jsonl", out_dir);
  text = NULL;
  EXPECT(vtg_model_predict(model, "val", path, &text) == VTG_OK);
  EXPECT(text && strstr(text, "\"written\": 4"));
  vtg_string_free(text);
  text = NULL;
  EXPECT(vtg_evaluate_predictions(path, NULL, &text) == VTG_OK);
  EXPECT(text && strstr(text, "mAP_avg"));
  vtg_string_free(text);

  {
    char plots[1024];
    snprintf(plots, sizeof plots, "%s/plots", out_dir);
    EXPECT(vtg_plot(path, plots, NULL, 3, &written) == VTG_OK);
    EXPECT(written == 4);
  }
  EXPECT(vtg_model_load("/nonexistent.ckpt", NULL) == VTG_ERR_INVALID_ARGUMENT);

  vtg_model_free(model);
  vtg_config_free(cfg);
  vtg_model_free(NULL);
  vtg_config_free(NULL);
  vtg_string_free(NULL);

  if (failures) {
    fprintf(stderr, "%d failure(s)\n", failures);
    return 1;
  }
  printf("C API checks passed\n");
  return 0;
}
