/*
 * mapkit C API — model applicability protection via learned binary masks.
 *
 * The core is a C++ library; this header is the stable ABI surface. All
 * functions return a mapkit_status; rich results come back as heap-allocated
 * JSON strings that the caller releases with mapkit_string_free. The last
 * error message for the calling thread is available via mapkit_last_error.
 */
#ifndef MAPKIT_H
#define MAPKIT_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mapkit_status {
    MAPKIT_OK = 0,
    MAPKIT_ERR_RUN = 1,    /* pipeline / IO failure */
    MAPKIT_ERR_CONFIG = 2, /* invalid configuration or arguments */
} mapkit_status;

/* Opaque, validated experiment configuration. */
typedef struct mapkit_config mapkit_config;

const char* mapkit_version(void);

/* Thread-local message for the most recent failure; never NULL. */
const char* mapkit_last_error(void);

void mapkit_string_free(char* s);

/*
 * Parses config JSON text, applies "dotted.key=value" overrides in order,
 * fills defaults and validates. On success *out owns the config
 * (release with mapkit_config_free).
 */
mapkit_status mapkit_config_parse(const char* json_text, const char* const* overrides,
                                  int n_overrides, mapkit_config** out);
void mapkit_config_free(mapkit_config* cfg);

/* Resolved configuration as JSON (caller frees). */
mapkit_status mapkit_config_dump(const mapkit_config* cfg, char** json_out);

/*
 * Supervised source training (mode "pretrain"). Writes model.ckpt under the
 * configured out_dir; *result_json carries the checkpoint metadata.
 */
mapkit_status mapkit_pretrain(const mapkit_config* cfg, char** result_json);

/*
 * Protection run; dispatches on the config mode (sa / sf / df). Writes the
 * run directory (config.json, metrics.json, mask.ckpt, losses.csv, figures/)
 * and returns the metrics report JSON. On failure a FAILED marker is left in
 * the run directory next to whatever partial artifacts exist.
 */
mapkit_status mapkit_protect(const mapkit_config* cfg, char** metrics_json);

/* Ownership verification run (mode "ownership"); artifacts as above. */
mapkit_status mapkit_verify_ownership(const mapkit_config* cfg, char** metrics_json);

/*
 * Evaluates a protected model: loads the source checkpoint plus the mask
 * checkpoint at mask_path (NULL/empty: all-ones mask) and reports per-domain
 * accuracy on the configured source/target test splits.
 */
mapkit_status mapkit_evaluate(const mapkit_config* cfg, const char* mask_path,
                              char** result_json);

/*
 * Side-by-side comparison table for completed run directories (reads each
 * metrics.json). Returns printable text.
 */
mapkit_status mapkit_report(const char* const* run_dirs, int n_dirs, char** table_out);

/*
 * ST-D metric: (drop_s/acc_s) / (drop_t/acc_t). A zero target drop sets
 * *is_infinite and returns +inf in *out (no-protection sentinel).
 */
mapkit_status mapkit_st_d(double acc_s, double drop_s, double acc_t, double drop_t, double* out,
                          int* is_infinite);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MAPKIT_H */
