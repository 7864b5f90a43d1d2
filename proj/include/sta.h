/* C interface to the Siamese tracker attack laboratory.
 *
 * A session holds a JSON run configuration plus overrides; commands read
 * and write files under the configured output directory. All functions
 * return STA_OK (0) on success, STA_ERR_NUMERIC (1) on a numeric or
 * acceptance failure, and STA_ERR_CONFIG (2) on usage/configuration
 * errors. sta_last_error() describes the most recent failure.
 */

#ifndef STA_H
#define STA_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define STA_OK 0
#define STA_ERR_NUMERIC 1
#define STA_ERR_CONFIG 2

typedef struct sta_session sta_session;

sta_session* sta_session_create(void);
void sta_session_destroy(sta_session* s);

/* Message for the last failed call on this session; empty string if none. */
const char* sta_last_error(const sta_session* s);

int sta_load_config_file(sta_session* s, const char* path);
int sta_load_config_json(sta_session* s, const char* json_text);
/* Dotted key, e.g. "attack.iters"; value parsed as JSON, else as a string. */
int sta_set_override(sta_session* s, const char* dotted_key, const char* value);
int sta_set_seed(sta_session* s, uint64_t seed);
int sta_set_output_dir(sta_session* s, const char* dir);

int sta_run_scene(sta_session* s);
int sta_run_attack(sta_session* s);
int sta_run_track(sta_session* s);
int sta_run_eval(sta_session* s);
int sta_run_transfer(sta_session* s);
int sta_run_gradcheck(sta_session* s);

#ifdef __cplusplus
}
#endif

#endif /* STA_H */
