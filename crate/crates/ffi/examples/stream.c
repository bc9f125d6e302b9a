/* Solves the bundled phytophtora task and prints a few stream records. */
#include <stdio.h>

#include "cascom.h"

static int fail(const char *what, CascomStatus status) {
    fprintf(stderr, "%s: %s: %s\n", what, cascom_status_name(status), cascom_last_error());
    return 1;
}

int main(void) {
    CascomKb *kb = NULL;
    CascomStatus st = cascom_kb_bundled(&kb);
    if (st != CASCOM_STATUS_OK) return fail("kb", st);

    char *solved = NULL;
    st = cascom_solve(kb, "T1-phytophtora", NULL, &solved);
    if (st != CASCOM_STATUS_OK) return fail("solve", st);

    CascomPipeline *pipeline = NULL;
    st = cascom_pipeline_new(kb, solved, CASCOM_MODE_PRECOMPILED, 5, &pipeline);
    cascom_string_free(solved);
    if (st != CASCOM_STATUS_OK) return fail("pipeline", st);

    char *line = NULL;
    while ((st = cascom_pipeline_next(pipeline, &line)) == CASCOM_STATUS_OK) {
        puts(line);
        cascom_string_free(line);
    }
    cascom_pipeline_free(pipeline);
    cascom_kb_free(kb);
    return st == CASCOM_STATUS_END_OF_STREAM ? 0 : fail("next", st);
}
