/* C interface to the aptmle library.
 *
 * Every object is an opaque handle released with its matching *_free
 * function. Functions returning aptmle_status leave a message retrievable
 * with aptmle_last_error() (per thread) when they fail. Strings returned by
 * the library are owned by the handle they came from.
 */
#ifndef APTMLE_H
#define APTMLE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define APTMLE_API __declspec(dllexport)
#else
#define APTMLE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum aptmle_status {
  APTMLE_OK = 0,
  APTMLE_ERR_INVALID_ARGUMENT = 1,
  APTMLE_ERR_IO = 2,
  APTMLE_ERR_PARSE = 3,
  APTMLE_ERR_CONFIG = 4,
  APTMLE_ERR_DATA = 5,
  APTMLE_ERR_NUMERIC = 6,
  APTMLE_ERR_INTERNAL = 7
} aptmle_status;

typedef struct aptmle_config aptmle_config;
typedef struct aptmle_dataset aptmle_dataset;
typedef struct aptmle_dgp aptmle_dgp;
typedef struct aptmle_report aptmle_report;

typedef struct aptmle_estimate {
  double estimate;
  double se; /* log scale for RR */
  double ci_lower;
  double ci_upper;
  double psi1;
  double psi0;
  double eps0;
  double eps1;
  double unadjusted_estimate;
  double unadjusted_se;
  double precision_gain;
  size_t independent_units;
} aptmle_estimate;

APTMLE_API const char* aptmle_version(void);
APTMLE_API const char* aptmle_last_error(void);

APTMLE_API aptmle_status aptmle_config_parse(const char* text, aptmle_config** out);
APTMLE_API aptmle_status aptmle_config_load(const char* path, aptmle_config** out);
/* Replaces the master seed; reports record that an override happened. */
APTMLE_API aptmle_status aptmle_config_set_seed(aptmle_config* config, uint64_t seed);
APTMLE_API aptmle_status aptmle_config_to_text(const aptmle_config* config, const char** text);
APTMLE_API void aptmle_config_free(aptmle_config* config);

APTMLE_API aptmle_status aptmle_dataset_load(const char* path, const aptmle_config* config, aptmle_dataset** out);
APTMLE_API aptmle_status aptmle_dataset_parse(const char* csv_text, const aptmle_config* config,
                                              aptmle_dataset** out);
APTMLE_API size_t aptmle_dataset_rows(const aptmle_dataset* data);
APTMLE_API void aptmle_dataset_free(aptmle_dataset* data);

APTMLE_API aptmle_status aptmle_dgp_parse(const char* text, aptmle_dgp** out);
APTMLE_API aptmle_status aptmle_dgp_load(const char* path, aptmle_dgp** out);
APTMLE_API void aptmle_dgp_free(aptmle_dgp* dgp);

/* timestamp: UTC ISO-8601 string to stamp the report with, or NULL for now. */
APTMLE_API aptmle_status aptmle_analyze(const aptmle_config* config, const aptmle_dataset* data, const char* timestamp,
                                        aptmle_report** out);
APTMLE_API aptmle_status aptmle_simulate(const aptmle_dgp* dgp, const aptmle_config* config, uint64_t reps,
                                         const char* timestamp, aptmle_report** out);
APTMLE_API aptmle_status aptmle_permtest(const aptmle_config* config, const aptmle_dataset* data, uint64_t reps,
                                         const char* timestamp, aptmle_report** out);

APTMLE_API const char* aptmle_report_json(const aptmle_report* report);
APTMLE_API const char* aptmle_report_summary(const aptmle_report* report);
/* Only available for analysis reports. */
APTMLE_API aptmle_status aptmle_report_estimate(const aptmle_report* report, aptmle_estimate* out);
APTMLE_API void aptmle_report_free(aptmle_report* report);

#ifdef __cplusplus
}
#endif

#endif /* APTMLE_H */
