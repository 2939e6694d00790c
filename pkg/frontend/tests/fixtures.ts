import type { AccountingWire, RecordWire } from '../src/types.js';

export function makeRecord(overrides: Partial<RecordWire> = {}): RecordWire {
  return {
    cve_id: 'CVE-2020-0601',
    cve: {
      cve_id: 'CVE-2020-0601',
      description: 'A spoofing vulnerability in certificate validation.',
      affected: [{ vendor: 'Microsoft', product: 'Windows', versions: ['10'] }],
      published_year: 2020,
    },
    mapping: {
      cve_id: 'CVE-2020-0601',
      exploitation_techniques: [
        { id: 'T1553.004', name: 'Install Root Certificate', reason: 'Trust chain subversion.' },
      ],
      primary_impacts: [{ id: 'T1557', name: 'Adversary-in-the-Middle' }],
      secondary_impacts: [
        { id: 'T1003', name: 'OS Credential Dumping' },
        { id: 'T1059', name: 'Command and Scripting Interpreter' },
      ],
    },
    validation: { status: 'valid', offenses: [] },
    lifecycle: 'accurate',
    raw_output: '{}',
    retrieved: [
      { rank: 1, technique_id: 'T1553.004', name: 'Install Root Certificate', score: 0.9 },
      { rank: 2, technique_id: 'T1557', name: 'Adversary-in-the-Middle', score: 0.8 },
    ],
    mode: 'rat-r',
    top_n: 10,
    rating: null,
    generated_at: '2026-01-01T00:00:00+00:00',
    ...overrides,
  };
}

export function makeAccounting(): AccountingWire {
  return {
    per_year: {
      '2019': { cve_count: 17, raw: 17, accurate: 10, curated: 1 },
      '2020': { cve_count: 17, raw: 17, accurate: 10, curated: 0 },
      '2021': { cve_count: 16, raw: 16, accurate: 10, curated: 0 },
    },
    totals: { cve_count: 50, raw: 50, accurate: 30, curated: 1 },
  };
}
